//! Span boundary decoding.

/// Indices of the `n` largest values, ties to the lower index, ascending.
pub fn top_n_sorted(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

/// Pairs the `n` most likely starts with the `n` most likely ends.
///
/// Both candidate lists are sorted ascending and zipped. The i-th span runs
/// from its start to one past its end (an end before the start is moved up
/// to the start), and is cut at the next span's start so spans never
/// overlap. Returns `min(n, len)` half-open `(start, end)` pairs in order.
pub fn nms_decode(start_probs: &[f64], end_probs: &[f64], n: usize) -> Vec<(usize, usize)> {
    assert_eq!(start_probs.len(), end_probs.len(), "start and end vectors differ in length");
    let starts = top_n_sorted(start_probs, n);
    let ends = top_n_sorted(end_probs, n);
    let mut spans = Vec::with_capacity(starts.len());
    for (i, (&s, &e)) in starts.iter().zip(&ends).enumerate() {
        let mut end = e.max(s) + 1;
        if let Some(&next) = starts.get(i + 1) {
            end = end.min(next);
        }
        spans.push((s, end));
    }
    spans
}
