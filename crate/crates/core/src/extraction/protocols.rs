use crate::bits::BitBuf;
use crate::error::{Error, Result};
use crate::source::PhotonEventStream;

/// Compares successive inter-arrival times. Events are taken as triples
/// `(t0, t1, t2)` where each triple starts at the previous one's end:
/// `t1 − t0 > t2 − t1` gives 0, `<` gives 1, a tie gives nothing.
pub fn protocol_diff(events: &PhotonEventStream) -> BitBuf {
    let e = &events.events;
    let mut out = BitBuf::with_capacity(e.len() / 2);
    let mut k = 0;
    while k + 2 < e.len() {
        let d1 = e[k + 1] - e[k];
        let d2 = e[k + 2] - e[k + 1];
        if d1 != d2 {
            out.push(d1 < d2);
        }
        k += 2;
    }
    out
}

/// Parity of the detection count in consecutive windows of `tau` ticks;
/// one bit per complete window.
pub fn protocol_odeven(events: &PhotonEventStream, tau: u64) -> Result<BitBuf> {
    if tau == 0 {
        return Err(Error::InvalidArgument("odeven window must be at least one tick".into()));
    }
    let windows = (events.span / tau) as usize;
    let mut out = BitBuf::zeros(windows);
    for &t in &events.events {
        let w = (t / tau) as usize;
        if w < windows {
            out.set(w, !out.get(w));
        }
    }
    Ok(out)
}
