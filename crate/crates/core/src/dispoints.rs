//! Greedy selection of `m` mutually dispersed points out of `n` in Θ(n·m).
//!
//! The selection starts with the first `m` candidates. Every other candidate
//! `p` is then challenged against its nearest selected point `q`: `q` is taken
//! out, and whichever of `p` or `q` has the larger distance sum to the rest of
//! the selection goes back in.

use crate::catalog::{Catalog, Landmark};
use crate::error::DispersionError;
use crate::geodesy::great_circle_km;

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionSelection {
    pub selected: Vec<Landmark>,
    /// Sum of pairwise great-circle distances among `selected`, in km.
    pub dispersion_score: f64,
}

/// Picks `m` dispersed landmarks using great-circle distances.
pub fn dispoints(candidates: &Catalog, m: usize) -> Result<DispersionSelection, DispersionError> {
    let lms = candidates.landmarks();
    let picked = select_dispersed(lms, m, |a, b| great_circle_km(a.position, b.position))?;
    let selected: Vec<Landmark> = picked.into_iter().map(|i| lms[i].clone()).collect();
    let dispersion_score = pairwise_sum(&selected, |a, b| great_circle_km(a.position, b.position));
    Ok(DispersionSelection {
        selected,
        dispersion_score,
    })
}

/// Index-level greedy selection over any metric. Ties on "nearest" go to the
/// lowest input index; the returned indices are in selection order.
pub fn select_dispersed<T, D>(points: &[T], m: usize, distance: D) -> Result<Vec<usize>, DispersionError>
where
    D: Fn(&T, &T) -> f64,
{
    if m == 0 {
        return Err(DispersionError::ZeroCount);
    }
    if m > points.len() {
        return Err(DispersionError::NotEnoughCandidates {
            wanted: m,
            available: points.len(),
        });
    }

    let mut selected: Vec<usize> = (0..m).collect();
    let mut in_selection = vec![false; points.len()];
    in_selection[..m].iter_mut().for_each(|b| *b = true);

    for p in 0..points.len() {
        if in_selection[p] {
            continue;
        }
        let mut nearest_slot = 0;
        let mut nearest_d = f64::INFINITY;
        for (slot, &s) in selected.iter().enumerate() {
            let d = distance(&points[p], &points[s]);
            if d < nearest_d || (d == nearest_d && s < selected[nearest_slot]) {
                nearest_d = d;
                nearest_slot = slot;
            }
        }
        let nearest = selected.remove(nearest_slot);
        let sum_p: f64 = selected.iter().map(|&s| distance(&points[p], &points[s])).sum();
        let sum_q: f64 = selected.iter().map(|&s| distance(&points[nearest], &points[s])).sum();
        if sum_p > sum_q {
            selected.push(p);
            in_selection[nearest] = false;
            in_selection[p] = true;
        } else {
            selected.push(nearest);
        }
    }
    Ok(selected)
}

/// Sum of distances over unordered pairs.
pub fn pairwise_sum<T, D>(points: &[T], distance: D) -> f64
where
    D: Fn(&T, &T) -> f64,
{
    let mut total = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            total += distance(&points[i], &points[j]);
        }
    }
    total
}
