//! Dense kernels: pairwise distances, row softmax, top-k column selection
//! and scaled dot-product attention on small matrices.
//!
//! ```bash
//! cargo run --example kernels
//! ```

use chromaprop::numkernel::{dot_attention, pairwise_sqdist, row_softmax, topk_columns, Mat};
use chromaprop::Real;

fn show(name: &str, m: &Mat) {
    println!("{name} ({}x{}):", m.rows(), m.cols());
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:8.4}")).collect();
        println!("  [{}]", row.join(" "));
    }
}

fn main() -> anyhow::Result<()> {
    // Columns are points: three 2-D queries and four 2-D keys.
    let q = Mat::from_columns(2, &[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 2.0]])?;
    let k = Mat::from_columns(2, &[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 0.0], &[0.0, 2.0]])?;

    let d = pairwise_sqdist(&q, &k)?;
    show("squared distances", &d);

    // Affinity as a softmax of negative distances, one row per query.
    let neg = Mat::from_fn(d.rows(), d.cols(), |r, c| -d.get(r, c));
    let w = row_softmax(&neg);
    show("affinity", &w);
    for r in 0..w.rows() {
        println!("  row {r} sums to {:.12}", w.row(r).iter().sum::<Real>());
    }

    // Column scores summed over queries; keep the two most attended keys.
    let scores = Mat::from_fn(1, w.cols(), |_, c| (0..w.rows()).map(|r| w.get(r, c)).sum());
    show("column mass", &scores);
    println!("top-2 columns: {:?}", topk_columns(&scores, 2)?.as_slice());

    // Row-major attention: rows of q, k and v are tokens.
    let qt = q.transpose();
    let kt = k.transpose();
    let v = Mat::from_fn(4, 2, |r, c| if c == 0 { r as Real } else { -(r as Real) });
    show("attention output", &dot_attention(&qt, &kt, &v, Real::sqrt(2.0))?);
    Ok(())
}
