use std::collections::HashSet;

use crate::{Error, Result};

/// Unique n-grams over total n-grams, pooled across the corpus.
pub fn distinct_n<S: AsRef<[String]>>(captions: &[S], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Undefined("n-gram order 0".into()));
    }
    let mut unique: HashSet<&[String]> = HashSet::new();
    let mut total = 0usize;
    for c in captions {
        let c = c.as_ref();
        if c.len() >= n {
            for w in c.windows(n) {
                unique.insert(w);
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Undefined(format!("no caption has {n} or more tokens")));
    }
    Ok(unique.len() as f64 / total as f64)
}
