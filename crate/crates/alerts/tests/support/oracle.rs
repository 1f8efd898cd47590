//! Brute-force reference for the debounce and re-arm rule: split the trace
//! (NoSignal samples removed) into maximal runs of breaches and normals, then
//! walk the runs.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obs {
    /// A usable reading and whether it lies inside the band.
    Reading { in_range: bool },
    NoSignal,
}

/// Trace indices at which the rule fires.
pub fn fire_positions(trace: &[Obs], debounce_n: usize, rearm_m: usize) -> Vec<usize> {
    // (in_range, original indices) per maximal run of usable readings.
    let mut runs: Vec<(bool, Vec<usize>)> = Vec::new();
    for (i, obs) in trace.iter().enumerate() {
        let Obs::Reading { in_range } = *obs else { continue };
        match runs.last_mut() {
            Some((kind, members)) if *kind == in_range => members.push(i),
            _ => runs.push((in_range, vec![i])),
        }
    }

    let mut fires = Vec::new();
    let mut rearmed = true;
    for (in_range, members) in runs {
        if in_range {
            if members.len() >= rearm_m {
                rearmed = true;
            }
        } else if members.len() >= debounce_n && rearmed {
            fires.push(members[debounce_n - 1]);
            rearmed = false;
        }
    }
    fires
}
