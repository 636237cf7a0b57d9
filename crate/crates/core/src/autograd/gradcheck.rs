//! Central-difference verification of reverse-mode gradients. Run with
//! `f64` parameters so truncation, not roundoff, dominates the error.

use super::store::ParamStore;
use super::tape::{NodeId, Tape};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compare analytic gradients of the scalar loss built by `build`
/// against central differences with step `h`, elementwise over every
/// parameter in the store. `build` must construct the same graph each
/// time it is called (it is re-run twice per parameter element).
///
/// The per-element error is relative for gradients of ordinary size and
/// absolute (against a 1e-3 scale) below that, since central
/// differences on near-zero gradients measure only roundoff. A sign or
/// factor error on any element large enough to matter still produces an
/// error many orders of magnitude above the usual thresholds.
pub fn check_gradients<F>(
    store: &mut ParamStore<f64>,
    mut build: F,
    h: f64,
) -> GradCheckReport
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> NodeId,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    let grads = tape.backward(loss);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for pid in 0..store.len() {
        let id = super::store::ParamId(pid);
        let len = store.get(id).len();
        for i in 0..len {
            let original = store.get(id).data()[i];

            store.get_mut(id).data_mut()[i] = original + h;
            let mut tp = Tape::new();
            let lp = build(&mut tp, store);
            let fp = tp.value(lp).data()[0];

            store.get_mut(id).data_mut()[i] = original - h;
            let mut tm = Tape::new();
            let lm = build(&mut tm, store);
            let fm = tm.value(lm).data()[0];

            store.get_mut(id).data_mut()[i] = original;

            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-3);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = store.name_of(id).to_string();
                report.worst_index = i;
            }
        }
    }
    report
}
