use std::collections::HashMap;

pub(crate) type Counts<'a> = HashMap<&'a [String], usize>;

pub(crate) fn ngrams<'a>(tokens: &'a [String], n: usize) -> Counts<'a> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}
