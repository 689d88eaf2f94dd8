/// Envelope stage times (seconds) and sustain level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adsr {
    pub attack: f64,
    pub decay: f64,
    pub sustain: f64,
    pub release: f64,
}

impl Adsr {
    /// Level while the gate is held, `t` seconds after note-on.
    pub fn held_level(&self, t: f64) -> f64 {
        if t < self.attack {
            t / self.attack
        } else if t < self.attack + self.decay {
            1.0 - (1.0 - self.sustain) * (t - self.attack) / self.decay
        } else {
            self.sustain
        }
    }

    pub fn level(&self, t: f64, note_len: f64) -> f64 {
        if t < note_len {
            self.held_level(t)
        } else {
            let since_off = t - note_len;
            if since_off >= self.release {
                0.0
            } else {
                self.held_level(note_len) * (1.0 - since_off / self.release)
            }
        }
    }

    pub fn render(&self, note_len: f64, n: usize, sample_rate: f64) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.render_into(note_len, sample_rate, &mut out);
        out
    }

    pub fn render_into(&self, note_len: f64, sample_rate: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.level(i as f64 / sample_rate, note_len);
        }
    }
}

/// Piecewise-linear ADSR: rises to 1 over `attack`, falls to `sustain` over
/// `decay`, holds until `note_len`, then ramps to 0 over `release`. Stages
/// are truncated when the note ends early.
pub fn adsr(
    attack: f64,
    decay: f64,
    sustain: f64,
    release: f64,
    note_len: f64,
    n: usize,
    sample_rate: f64,
) -> Vec<f64> {
    Adsr {
        attack,
        decay,
        sustain,
        release,
    }
    .render(note_len, n, sample_rate)
}
