use crate::CoreError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub sub: usize,
    pub del: usize,
    pub ins: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.sub + self.del + self.ins
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.sub += o.sub;
        self.del += o.del;
        self.ins += o.ins;
    }
}

/// Minimum-edit alignment of `hyp` against `reference` with unit costs. The
/// backtrace prefers match/substitution, then deletion, then insertion.
pub fn edit_counts<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i * w + j] = diag.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let mut c = EditCounts::default();
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                c.sub += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            c.del += 1;
            i -= 1;
        } else {
            c.ins += 1;
            j -= 1;
        }
    }
    c
}

/// Word error rate `(sub + del + ins) / |reference|`; may exceed 1.
pub fn wer<T: PartialEq>(reference: &[T], hyp: &[T]) -> Result<(f64, EditCounts), CoreError> {
    if reference.is_empty() {
        return Err(CoreError::EmptyReference);
    }
    let c = edit_counts(reference, hyp);
    Ok((c.total() as f64 / reference.len() as f64, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(wer(&["a", "b"], &["a", "b"]).unwrap().0, 0.0);
        let (r, c) = wer(&["MORGEN", "REGEN", "NORD"], &["MORGEN", "NORD"]).unwrap();
        assert_eq!(c, EditCounts { sub: 0, del: 1, ins: 0 });
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
        let (r, c) = wer(&["a"], &["b", "c"]).unwrap();
        assert_eq!((c.sub, c.ins, r), (1, 1, 2.0));
        assert!(matches!(wer::<u8>(&[], &[1]), Err(CoreError::EmptyReference)));
    }
}
