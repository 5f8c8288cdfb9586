//! Reference affinity propagation, transcribed term by term from the
//! message-update equations with plain nested loops. Used to check the
//! library implementation; intentionally shares no code with it.
//!
//! Update rules, synchronous per matrix, damped with factor `damping`:
//!   r(i,j) = s(i,j) − max_{k≠j} { a(i,k) + s(i,k) }
//!   a(i,j) = min{0, r(j,j) + Σ_{k∉{i,j}} max{0, r(k,j)}}   for i ≠ j
//!   a(j,j) = Σ_{k≠j} max{0, r(k,j)}
//! Exemplars after each iteration: { i : r(i,i) + a(i,i) > 0 }.
//! Convergence: exemplar set unchanged for `conv_window` consecutive
//! iterations. Empty set at termination falls back to the single index
//! maximizing r(i,i)+a(i,i). Ties always break to the lowest index.

pub struct OracleResult {
    pub exemplars: Vec<usize>,
    pub assignment: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

pub fn oracle_similarity(points: &[Vec<f64>], preference: f64) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                s[i][j] = preference;
            } else {
                let mut d2 = 0.0;
                for (xi, xj) in points[i].iter().zip(&points[j]) {
                    d2 += (xi - xj) * (xi - xj);
                }
                s[i][j] = -d2;
            }
        }
    }
    s
}

pub fn oracle_ap(
    s: &[Vec<f64>],
    damping: f64,
    max_iter: usize,
    conv_window: usize,
) -> OracleResult {
    let n = s.len();
    let mut r = vec![vec![0.0; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    let mut prev: Option<Vec<usize>> = None;
    let mut stable = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;

    for it in 1..=max_iter {
        // Responsibilities from the current availabilities.
        let mut r_new = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut best = f64::NEG_INFINITY;
                for k in 0..n {
                    if k == j {
                        continue;
                    }
                    let v = a[i][k] + s[i][k];
                    if v > best {
                        best = v;
                    }
                }
                r_new[i][j] = s[i][j] - best;
            }
        }
        for i in 0..n {
            for j in 0..n {
                r[i][j] = damping * r[i][j] + (1.0 - damping) * r_new[i][j];
            }
        }

        // Availabilities from the updated responsibilities.
        let mut a_new = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    let mut sum = 0.0;
                    for k in 0..n {
                        if k == j {
                            continue;
                        }
                        sum += r[k][j].max(0.0);
                    }
                    a_new[j][j] = sum;
                } else {
                    let mut sum = 0.0;
                    for k in 0..n {
                        if k == i || k == j {
                            continue;
                        }
                        sum += r[k][j].max(0.0);
                    }
                    a_new[i][j] = (r[j][j] + sum).min(0.0);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                a[i][j] = damping * a[i][j] + (1.0 - damping) * a_new[i][j];
            }
        }

        let exemplars: Vec<usize> = (0..n).filter(|&i| r[i][i] + a[i][i] > 0.0).collect();
        if prev.as_ref() == Some(&exemplars) {
            stable += 1;
        } else {
            stable = 0;
        }
        prev = Some(exemplars);
        iterations = it;
        if stable >= conv_window {
            converged = true;
            break;
        }
    }

    let mut exemplars = prev.unwrap_or_default();
    if exemplars.is_empty() {
        let mut best = 0;
        for i in 1..n {
            if r[i][i] + a[i][i] > r[best][best] + a[best][best] {
                best = i;
            }
        }
        exemplars = vec![best];
    }

    let assignment = oracle_assign(s, &exemplars);
    OracleResult {
        exemplars,
        assignment,
        converged,
        iterations,
    }
}

pub fn oracle_assign(s: &[Vec<f64>], exemplars: &[usize]) -> Vec<usize> {
    let n = s.len();
    let mut assignment = vec![0usize; n];
    for i in 0..n {
        if exemplars.contains(&i) {
            assignment[i] = i;
            continue;
        }
        let mut best = exemplars[0];
        for &e in &exemplars[1..] {
            if s[i][e] > s[i][best] {
                best = e;
            }
        }
        assignment[i] = best;
    }
    assignment
}
