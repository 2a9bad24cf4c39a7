use rand::Rng;

/// Source of the random draws consumed by a training-mode forward pass.
pub trait NoiseSource {
    /// One draw from Uniform[0,1).
    fn uniform(&mut self) -> f64;

    /// One standard Gumbel draw, `−ln(−ln U)` with U kept 1e-12 away from 0 and 1.
    fn gumbel(&mut self) -> f64 {
        let u = self.uniform().clamp(1e-12, 1.0 - 1e-12);
        -(-u.ln()).ln()
    }
}

/// Noise drawn from a random number generator.
#[derive(Debug, Clone)]
pub struct RngNoise<R>(pub R);

impl<R: Rng> NoiseSource for RngNoise<R> {
    fn uniform(&mut self) -> f64 {
        self.0.gen::<f64>()
    }
}

/// Replays fixed Gumbel values in order, then fixed uniforms. Used to
/// evaluate the same stochastic forward pass several times.
#[derive(Debug, Clone, Default)]
pub struct FrozenNoise {
    gumbels: Vec<f64>,
    uniforms: Vec<f64>,
    g_pos: usize,
    u_pos: usize,
}

impl FrozenNoise {
    pub fn new(gumbels: Vec<f64>) -> Self {
        Self { gumbels, ..Self::default() }
    }

    pub fn with_uniforms(mut self, uniforms: Vec<f64>) -> Self {
        self.uniforms = uniforms;
        self
    }

    /// Captures `count` Gumbel draws from `source`.
    pub fn capture(source: &mut dyn NoiseSource, count: usize) -> Self {
        Self::new((0..count).map(|_| source.gumbel()).collect())
    }

    pub fn rewind(&mut self) {
        self.g_pos = 0;
        self.u_pos = 0;
    }

    pub fn consumed(&self) -> usize {
        self.g_pos
    }
}

impl NoiseSource for FrozenNoise {
    fn uniform(&mut self) -> f64 {
        let v = *self.uniforms.get(self.u_pos).expect("frozen uniform noise exhausted");
        self.u_pos += 1;
        v
    }

    fn gumbel(&mut self) -> f64 {
        let v = *self.gumbels.get(self.g_pos).expect("frozen gumbel noise exhausted");
        self.g_pos += 1;
        v
    }
}

/// One standard Gumbel draw from `rng`.
pub fn gumbel_sample(rng: &mut impl Rng) -> f64 {
    RngNoise(rng).gumbel()
}

/// Reborrows an optional noise source for a nested call.
pub fn reborrow<'s>(noise: &'s mut Option<&mut dyn NoiseSource>) -> Option<&'s mut dyn NoiseSource> {
    match noise {
        Some(n) => Some(&mut **n),
        None => None,
    }
}
