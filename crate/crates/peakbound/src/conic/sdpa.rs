//! Export to the SDPA sparse format (`.dat-s`), the common interchange
//! format for semidefinite solvers; lets results be cross-checked against
//! any external tool.
//!
//! SDPA poses the dual pair
//!
//! ```txt
//!   min b . y   s.t.  sum_i y_i F_i - F_0  psd
//! ```
//!
//! Our maximization `max c . s` with blocks `Mat_j(s) + C_j psd` maps onto it
//! with `y = s`, `b = -c`, `F_i` holding the block coefficients of scalar `i`
//! and `F_0 = -C`. Equality rows are exported as paired inequalities
//! (two 1x1 diagonal blocks), inequality rows as single 1x1 blocks.

use super::ConicProgram;
use std::fmt::Write as _;

/// Renders the program in SDPA sparse format. Entry order is deterministic.
pub fn to_sdpa_sparse(p: &ConicProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "\"{}\"", "exported conic program");
    let _ = writeln!(out, "{}", p.num_scalars);

    // Block sizes: PSD blocks first, then one diagonal block collecting all
    // scalar rows (two per equality, one per inequality). Diagonal blocks
    // are written with negative size per the format.
    let n_lin = 2 * p.equalities.len() + p.inequalities.len();
    let mut sizes: Vec<i64> = p.psd_blocks.iter().map(|b| b.side as i64).collect();
    if n_lin > 0 {
        sizes.push(-(n_lin as i64));
    }
    let _ = writeln!(out, "{}", sizes.len());
    let _ = writeln!(
        out,
        "{}",
        sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    );

    let b: Vec<f64> = {
        let mut v = vec![0.0; p.num_scalars];
        for &(k, c) in &p.objective {
            v[k] += c;
        }
        v.iter().map(|c| -c).collect()
    };
    let _ = writeln!(
        out,
        "{}",
        b.iter()
            .map(|x| format!("{x:.17e}"))
            .collect::<Vec<_>>()
            .join(" ")
    );

    // Entries: "matno blkno i j value" with 1-based indices; matno 0 is F_0.
    let mut emit = |mat: usize, blk: usize, i: usize, j: usize, v: f64| {
        if v != 0.0 {
            let _ = writeln!(out, "{mat} {blk} {} {} {v:.17e}", i + 1, j + 1);
        }
    };
    for (bi, block) in p.psd_blocks.iter().enumerate() {
        for &(i, j, k, c) in &block.coefs {
            emit(k + 1, bi + 1, i as usize, j as usize, c);
        }
        for &(i, j, c) in &block.consts {
            emit(0, bi + 1, i as usize, j as usize, -c);
        }
    }
    if n_lin > 0 {
        let blk = p.psd_blocks.len() + 1;
        let mut slot = 0usize;
        for row in &p.equalities {
            // row . s - rhs >= 0 and rhs - row . s >= 0.
            for &(k, c) in &row.terms {
                emit(k + 1, blk, slot, slot, c);
                emit(k + 1, blk, slot + 1, slot + 1, -c);
            }
            emit(0, blk, slot, slot, row.rhs);
            emit(0, blk, slot + 1, slot + 1, -row.rhs);
            slot += 2;
        }
        for row in &p.inequalities {
            // rhs - row . s >= 0.
            for &(k, c) in &row.terms {
                emit(k + 1, blk, slot, slot, -c);
            }
            emit(0, blk, slot, slot, -row.rhs);
            slot += 1;
        }
    }
    out
}
