use nse_core::nse::NseEncoder;
use nse_core::{ParameterSet, Tensor};

/// Makes `mma` compute what `plain` computes: read and write cells and all
/// composition layers are copied, and the first composition layer gets zero
/// weights on its auxiliary input blocks.
pub fn copy_with_zero_aux(p: &mut ParameterSet<f64>, plain: &NseEncoder, mma: &NseEncoder) {
    let copy = |p: &mut ParameterSet<f64>, from, to| {
        let t = p.get(from).clone();
        p.set(to, t).unwrap();
    };
    for (a, b) in plain.read.cells.iter().zip(&mma.read.cells).chain(plain.write.cells.iter().zip(&mma.write.cells)) {
        copy(p, a.w, b.w);
        copy(p, a.b, b.b);
    }
    for (i, (a, b)) in plain.compose.layers.iter().zip(&mma.compose.layers).enumerate() {
        copy(p, a.b, b.b);
        if i > 0 {
            copy(p, a.w, b.w);
            continue;
        }
        let src = p.get(a.w).clone();
        let (rows, narrow) = (src.rows(), src.cols());
        let wide = p.get(b.w).cols();
        let mut w = vec![0.0; rows * wide];
        for r in 0..rows {
            w[r * wide..r * wide + narrow].copy_from_slice(src.row(r));
        }
        p.set(b.w, Tensor::matrix(rows, wide, w).unwrap()).unwrap();
    }
}
