//! Local-maximum detection on uniformly sampled spectra.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    /// Leftmost index of the (possibly flat) maximum.
    pub index: usize,
    pub value: f64,
    pub prominence: f64,
}

/// Interior local maxima whose prominence is at least `min_prominence`.
///
/// Flat tops count once, at their leftmost sample. Prominence is the height
/// above the higher of the two lowest points reached before climbing to a
/// taller sample (or the array edge) on either side.
pub fn find_peaks(values: &[f64], min_prominence: f64) -> Vec<Peak> {
    let n = values.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut end = i;
            while end + 1 < n && values[end + 1] == values[i] {
                end += 1;
            }
            if end + 1 < n && values[end + 1] < values[i] {
                let prominence = prominence(values, i, end);
                if prominence >= min_prominence {
                    peaks.push(Peak {
                        index: i,
                        value: values[i],
                        prominence,
                    });
                }
            }
            i = end + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

fn prominence(values: &[f64], start: usize, end: usize) -> f64 {
    let top = values[start];
    let mut left_min = top;
    for &v in values[..start].iter().rev() {
        if v > top {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = top;
    for &v in &values[end + 1..] {
        if v > top {
            break;
        }
        right_min = right_min.min(v);
    }
    top - left_min.max(right_min)
}

/// Full width at half maximum around the global maximum, with linear
/// interpolation of the crossings. `None` if either side never drops below half.
pub fn fwhm(x: &[f64], y: &[f64]) -> Option<f64> {
    let (imax, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let half = 0.5 * ymax;
    let left = (1..=imax).rev().find(|&i| y[i - 1] < half).map(|i| {
        let (x0, x1, y0, y1) = (x[i - 1], x[i], y[i - 1], y[i]);
        x0 + (half - y0) * (x1 - x0) / (y1 - y0)
    })?;
    let right = (imax..y.len() - 1).find(|&i| y[i + 1] < half).map(|i| {
        let (x0, x1, y0, y1) = (x[i], x[i + 1], y[i], y[i + 1]);
        x0 + (half - y0) * (x1 - x0) / (y1 - y0)
    })?;
    Some(right - left)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_reports_leftmost_index() {
        let y = [0.0, 1.0, 3.0, 3.0, 3.0, 1.0, 0.0];
        let p = find_peaks(&y, 0.0);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].index, 2);
        assert_eq!(p[0].prominence, 3.0);
    }

    #[test]
    fn edges_and_shoulders_are_not_peaks() {
        assert!(find_peaks(&[5.0, 4.0, 3.0], 0.0).is_empty());
        assert!(find_peaks(&[1.0, 2.0, 2.0], 0.0).is_empty());
    }

    #[test]
    fn prominence_filters_ripples() {
        let y = [0.0, 10.0, 9.95, 9.97, 9.0, 4.0, 6.0, 0.0];
        let all = find_peaks(&y, 0.0);
        assert_eq!(all.len(), 3);
        let kept = find_peaks(&y, 0.1);
        assert_eq!(kept.iter().map(|p| p.index).collect::<Vec<_>>(), vec![1, 6]);
        assert_eq!(kept[1].prominence, 2.0);
    }

    #[test]
    fn triangle_width() {
        let x: Vec<f64> = (0..=20).map(|i| i as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| (10.0 - (v - 10.0).abs()).max(0.0))
            .collect();
        assert!((fwhm(&x, &y).unwrap() - 10.0).abs() < 1e-12);
    }
}
