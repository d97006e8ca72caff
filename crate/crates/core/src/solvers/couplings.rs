//! Shared per-user coupling terms. Every block subproblem decomposes the
//! received symbol `h_k^H w_j` into a direct part and a per-element surface
//! part; these helpers compute both once per assembly.

use crate::model::{Beamformer, C64, CVec, ChannelSet};

/// `G w_j` for every beam.
pub(crate) fn forwarded_beams(ch: &ChannelSet, bf: &Beamformer) -> Vec<CVec> {
    bf.w.iter().map(|w| &ch.g * w).collect()
}

/// Couplings of one user: `a[j] = h_d,k^H w_j` and
/// `b[j][m] = conj(h_r,k[m]) (G w_j)[m]`, so that
/// `h_k^H w_j = a[j] + sum_m theta_m d_m alpha_m b[j][m]` on the user's face.
pub(crate) struct UserCouplings {
    pub a: Vec<C64>,
    pub b: Vec<CVec>,
}

pub(crate) fn user_couplings(ch: &ChannelSet, bf: &Beamformer, gw: &[CVec], k: usize) -> UserCouplings {
    let m = ch.g.nrows();
    let h_d = &ch.h_d[k];
    let h_r = &ch.h_r[k];
    let mut a = Vec::with_capacity(bf.w.len());
    let mut b = Vec::with_capacity(bf.w.len());
    for (j, w) in bf.w.iter().enumerate() {
        a.push(h_d.dotc(w));
        let mut bj = CVec::zeros(m);
        for i in 0..m {
            bj[i] = h_r[i].conj() * gw[j][i];
        }
        b.push(bj);
    }
    UserCouplings { a, b }
}
