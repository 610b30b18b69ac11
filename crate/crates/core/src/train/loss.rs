/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean over triples of `-ln σ(pos - neg)`.
pub fn bpr_loss(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    assert_eq!(pos_scores.len(), neg_scores.len(), "score vectors differ in length");
    assert!(!pos_scores.is_empty(), "empty batch");
    let total: f64 = pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(p, n)| softplus(-(p - n)))
        .sum();
    total / pos_scores.len() as f64
}

/// `(c / 2) · mean_t (‖x_u‖² + ‖x_i‖² + ‖x_j‖²)` over the raw ID embeddings of
/// each triple.
pub fn l2_penalty<'a, I>(coeff: f64, triples: I) -> f64
where
    I: IntoIterator<Item = [&'a [f64]; 3]>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for rows in triples {
        total += rows
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>();
        count += 1;
    }
    if count == 0 || coeff == 0.0 {
        return 0.0;
    }
    0.5 * coeff * total / count as f64
}
