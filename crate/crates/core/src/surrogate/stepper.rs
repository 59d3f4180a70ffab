use super::fast::FastModel;
use super::SurrogateModel;
use crate::error::{Error, Result};

/// Year-by-year wrapper with the same step interface as the simulator. It
/// keeps the last `W` normalized rows and their first-layer projections, so
/// a step costs one recurrence over a bounded window no matter how many
/// years have elapsed.
///
/// Both buffers are rings stored twice over (`2W` rows, slot `i` mirrored at
/// `i + W`), so the current window is always one contiguous slice.
#[derive(Clone)]
pub struct SurrogateStepper {
    fast: FastModel,
    c: usize,
    w: usize,
    pw: usize,
    hist: Vec<f64>,
    proj: Vec<f64>,
    start: usize,
    now: Vec<f64>,
    year: i32,
    initial: (Vec<f64>, Vec<f64>, i32),
}

impl SurrogateStepper {
    /// `history` holds controllable-gas rows (oldest first) for the years
    /// `first_year ..` and must cover at least one window.
    pub fn new(model: &SurrogateModel, first_year: i32, history: &[f64]) -> Result<Self> {
        let fast = FastModel::new(model);
        let (c, w, pw) = (fast.n_inputs(), fast.window(), fast.projection_width());
        if history.len() % c != 0 {
            return Err(Error::Shape {
                what: "stepper history",
                expected: c,
                got: history.len() % c,
            });
        }
        let rows = history.len() / c;
        if rows < w {
            return Err(Error::InvalidInput(format!(
                "stepper needs {w} historical years, got {rows}"
            )));
        }
        if history.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite stepper history".into()));
        }
        let mut hist = vec![0.0; 2 * w * c];
        let mut proj = vec![0.0; 2 * w * pw];
        let tail = &history[(rows - w) * c..];
        for t in 0..w {
            fast.normalize_row(&tail[t * c..(t + 1) * c], &mut hist[t * c..(t + 1) * c]);
            if pw > 0 {
                fast.project_row(&hist[t * c..(t + 1) * c], &mut proj[t * pw..(t + 1) * pw]);
            }
        }
        hist.copy_within(..w * c, w * c);
        proj.copy_within(..w * pw, w * pw);
        let year = first_year + rows as i32;
        Ok(SurrogateStepper {
            fast,
            c,
            w,
            pw,
            initial: (hist.clone(), proj.clone(), year),
            hist,
            proj,
            start: 0,
            now: vec![0.0; c],
            year,
        })
    }

    /// Year the next call to [`step`](Self::step) predicts.
    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn n_gases(&self) -> usize {
        self.c
    }

    /// Appends this year's controllable emissions and returns ΔT̂ in K.
    pub fn step(&mut self, emissions: &[f64]) -> Result<f64> {
        if emissions.len() != self.c {
            return Err(Error::Shape {
                what: "stepper emissions",
                expected: self.c,
                got: emissions.len(),
            });
        }
        if emissions.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite emissions".into()));
        }
        let mut now = std::mem::take(&mut self.now);
        self.fast.normalize_row(emissions, &mut now);
        let (c, w, pw, s) = (self.c, self.w, self.pw, self.start);
        let y = self.fast.predict_parts(
            &self.hist[s * c..(s + w) * c],
            &self.proj[s * pw..(s + w) * pw],
            &now,
        );
        // the oldest slot becomes the newest row
        self.hist[s * c..(s + 1) * c].copy_from_slice(&now);
        self.hist[(s + w) * c..(s + w + 1) * c].copy_from_slice(&now);
        if pw > 0 {
            let (lo, hi) = self.proj.split_at_mut((s + w) * pw);
            let slot = &mut lo[s * pw..(s + 1) * pw];
            self.fast.project_row(&now, slot);
            hi[..pw].copy_from_slice(slot);
        }
        self.start = (s + 1) % w;
        self.now = now;
        self.year += 1;
        Ok(y)
    }

    /// Steps with an explicit year, which must be the cursor year.
    pub fn step_year(&mut self, year: i32, emissions: &[f64]) -> Result<f64> {
        if year != self.year {
            return Err(Error::YearOrder {
                expected: self.year,
                got: year,
            });
        }
        self.step(emissions)
    }

    /// Back to the state right after construction.
    pub fn reset(&mut self) {
        self.hist.copy_from_slice(&self.initial.0);
        self.proj.copy_from_slice(&self.initial.1);
        self.start = 0;
        self.year = self.initial.2;
    }
}
