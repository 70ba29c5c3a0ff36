/// Benjamini-Hochberg step-up procedure.
///
/// Returns the rejection flags at level `q` and the adjusted p-values
/// (q-values), which are monotone in the raw p-values and capped at 1.
/// Non-finite p-values are treated as 1.
pub fn bh_fdr(p_values: &[f64], q: f64) -> (Vec<bool>, Vec<f64>) {
    let m = p_values.len();
    let clean: Vec<f64> = p_values.iter().map(|&p| if p.is_finite() { p.clamp(0.0, 1.0) } else { 1.0 }).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| clean[i].total_cmp(&clean[j]).then(i.cmp(&j)));
    let mut q_values = vec![1.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(clean[i] * m as f64 / (rank + 1) as f64);
        // m / rank ≥ 1, so q ≥ p; the max only undoes rounding in the product.
        q_values[i] = running.max(clean[i]);
    }
    let rejected = q_values.iter().map(|&v| v <= q).collect();
    (rejected, q_values)
}
