//! The covariate and outcome networks as a g-formula model set.

use std::path::Path;

use dlnice_core::montecarlo::{BoundedNormal, CovariateDistribution, ModelSet};
use dlnice_core::{Error, History, Result};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::NetworkKind;
use crate::data::{Normalizer, CD4, HIGH_BMI, INPUT_DIM, INSTI, RNA, SIDE_DIM};
use crate::network::{probability, Network, State};
use crate::train::TrainedNetwork;

pub const COVARIATE_FILE: &str = "covariate.nn";
pub const OUTCOME_FILE: &str = "outcome.nn";

#[derive(Clone, Debug)]
pub struct DeepModelSet {
    pub covariate: TrainedNetwork,
    pub outcome: TrainedNetwork,
}

/// Recurrent state of one network along a history, with the inputs it has
/// consumed so that a changed history is detected and replayed.
#[derive(Clone, Debug)]
pub struct Tracker {
    state: State,
    consumed: Vec<f64>,
}

impl Tracker {
    fn new(net: &Network) -> Self {
        Self { state: net.new_state(), consumed: Vec::new() }
    }

    /// Brings the state to `steps` consumed positions of `h`.
    fn advance(
        &mut self,
        net: &Network,
        h: &History,
        steps: usize,
        encode: impl Fn(&History, usize, &mut [f64]),
        buf: &mut [f64],
    ) -> Result<()> {
        let keep = self.state.steps.min(steps);
        let stale = self.state.steps > steps
            || (0..keep).any(|j| {
                encode(h, j, buf);
                buf != &self.consumed[j * INPUT_DIM..(j + 1) * INPUT_DIM]
            });
        if stale {
            self.state = net.new_state();
            self.consumed.clear();
        }
        for j in self.state.steps..steps {
            encode(h, j, buf);
            net.step(&mut self.state, buf)?;
            self.consumed.extend_from_slice(buf);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DeepScratch {
    covariate: Tracker,
    outcome: Tracker,
    input: [f64; INPUT_DIM],
    side: [f64; SIDE_DIM],
}

impl DeepModelSet {
    pub fn new(covariate: TrainedNetwork, outcome: TrainedNetwork) -> Result<Self> {
        if covariate.kind != NetworkKind::Covariate || outcome.kind != NetworkKind::Outcome {
            return Err(Error::Domain("expected a covariate and an outcome network".into()));
        }
        covariate.residual("cd4")?;
        covariate.residual("rna")?;
        Ok(Self { covariate, outcome })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_checkpoint(&self.covariate, dir.join(COVARIATE_FILE))?;
        save_checkpoint(&self.outcome, dir.join(OUTCOME_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Self::new(load_checkpoint(dir.join(COVARIATE_FILE))?, load_checkpoint(dir.join(OUTCOME_FILE))?)
    }

    fn norm_cov(&self) -> &Normalizer {
        &self.covariate.norm
    }

    fn advance_covariate(&self, h: &History, k: usize, s: &mut DeepScratch) -> Result<()> {
        let norm = self.norm_cov();
        s.covariate.advance(&self.covariate.net, h, k + 1, |h, j, out| norm.covariate_input(h, j, out), &mut s.input)
    }
}

fn check_len(h: &History, need: usize, what: &str, k: usize) -> Result<()> {
    if h.len() < need {
        return Err(Error::Shape(format!("{what} at k={k} needs {need} months of history, found {}", h.len())));
    }
    Ok(())
}

impl ModelSet for DeepModelSet {
    type Scratch = DeepScratch;

    fn new_scratch(&self) -> DeepScratch {
        DeepScratch {
            covariate: Tracker::new(&self.covariate.net),
            outcome: Tracker::new(&self.outcome.net),
            input: [0.0; INPUT_DIM],
            side: [0.0; SIDE_DIM],
        }
    }

    fn covariate_step(&self, h: &History, k: usize, s: &mut DeepScratch) -> Result<CovariateDistribution> {
        if k == 0 {
            return Err(Error::Domain("month-0 covariates are baseline draws".into()));
        }
        check_len(h, k, "covariate step", k)?;
        if h.insti.len() < k {
            return Err(Error::Shape(format!("covariate step at k={k} needs treatment through k-1")));
        }
        self.advance_covariate(h, k, s)?;
        let (net, norm) = (&self.covariate.net, self.norm_cov());
        let st = &s.covariate.state;
        let cd4 = BoundedNormal::clamped(
            norm.cd4.unz(net.head(st, CD4, &[])),
            self.covariate.residual("cd4")?,
            norm.cd4_range.0,
            norm.cd4_range.1,
        );
        let rna = BoundedNormal::clamped(
            norm.rna.unz(net.head(st, RNA, &[])),
            self.covariate.residual("rna")?,
            norm.rna_range.0,
            norm.rna_range.1,
        );
        Ok(CovariateDistribution { cd4, rna, high_bmi: probability(net.head(st, HIGH_BMI, &[])) })
    }

    fn treatment_prob(&self, h: &History, k: usize, s: &mut DeepScratch) -> Result<f64> {
        check_len(h, k + 1, "treatment", k)?;
        if h.insti.len() < k {
            return Err(Error::Shape(format!("treatment at k={k} needs treatment through k-1")));
        }
        self.advance_covariate(h, k, s)?;
        self.norm_cov().covariate_side(h, k, &mut s.side);
        Ok(probability(self.covariate.net.head(&s.covariate.state, INSTI, &s.side)))
    }

    fn hazard(&self, h: &History, k: usize, s: &mut DeepScratch) -> Result<f64> {
        check_len(h, k + 1, "hazard", k)?;
        if h.insti.len() < k + 1 {
            return Err(Error::Shape(format!("hazard at k={k} needs treatment through k")));
        }
        let norm = &self.outcome.norm;
        s.outcome.advance(&self.outcome.net, h, k + 1, |h, j, out| norm.outcome_input(h, j, out), &mut s.input)?;
        Ok(probability(self.outcome.net.head(&s.outcome.state, 0, &[])))
    }
}
