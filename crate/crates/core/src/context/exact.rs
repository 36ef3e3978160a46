use std::collections::HashMap;

use super::{ContextScorer, ContextWindow};
use crate::error::{Error, Result};

/// Ground-truth `Pr(c | x, y)` over a finite context alphabet.
///
/// Contexts are identified by the exact token sequence of the window minus
/// the attacked position. Only meaningful on synthetic data whose generating
/// joint is known.
#[derive(Clone, Debug)]
pub struct ExactJointScorer {
    inputs: HashMap<String, usize>,
    outputs: HashMap<String, usize>,
    contexts: HashMap<Vec<String>, usize>,
    // [x][y][c]
    table: Vec<Vec<Vec<f64>>>,
}

impl ExactJointScorer {
    pub fn new(
        inputs: &[String],
        outputs: &[String],
        contexts: Vec<Vec<String>>,
        table: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let shape_ok = table.len() == inputs.len()
            && table
                .iter()
                .all(|by_y| by_y.len() == outputs.len() && by_y.iter().all(|by_c| by_c.len() == contexts.len()));
        if !shape_ok {
            return Err(Error::Config("context table shape does not match the alphabets".into()));
        }
        let index = |names: &[String]| names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(ExactJointScorer {
            inputs: index(inputs),
            outputs: index(outputs),
            contexts: contexts.into_iter().enumerate().map(|(i, c)| (c, i)).collect(),
            table,
        })
    }
}

impl ContextScorer for ExactJointScorer {
    fn score(&self, window: &ContextWindow, candidate: &str, observed: &str) -> Result<f64> {
        let x =
            self.inputs.get(candidate).ok_or_else(|| Error::Scorer(format!("unknown input token {candidate:?}")))?;
        let y =
            self.outputs.get(observed).ok_or_else(|| Error::Scorer(format!("unknown output token {observed:?}")))?;
        let key: Vec<String> = window.context().map(str::to_owned).collect();
        let c = self.contexts.get(&key).ok_or_else(|| Error::Scorer(format!("unknown context {key:?}")))?;
        Ok(self.table[*x][*y][*c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn looks_up_table_entries() {
        let table = vec![vec![vec![0.25, 0.75]], vec![vec![0.5, 0.5]]];
        let scorer =
            ExactJointScorer::new(&names("x", 2), &names("y", 1), vec![vec!["c0".into()], vec!["c1".into()]], table)
                .unwrap();
        let w = ContextWindow::new(vec!["y0".into(), "c1".into()], 0).unwrap();
        assert_eq!(scorer.score(&w, "x0", "y0").unwrap(), 0.75);
        assert_eq!(scorer.score(&w, "x1", "y0").unwrap(), 0.5);
        assert!(scorer.score(&w, "x9", "y0").is_err());
        let unknown = ContextWindow::new(vec!["y0".into(), "c7".into()], 0).unwrap();
        assert!(scorer.score(&unknown, "x0", "y0").is_err());
    }

    #[test]
    fn rejects_bad_shape() {
        assert!(ExactJointScorer::new(&names("x", 2), &names("y", 1), vec![], vec![vec![vec![]]]).is_err());
    }
}
