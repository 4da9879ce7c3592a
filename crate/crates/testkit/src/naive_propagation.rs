//! Unit propagation by repeated full scans.

/// Clause literals are DIMACS-style: `v + 1` or `-(v + 1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Closure {
    pub assignment: Vec<Option<bool>>,
    pub conflict: bool,
}

pub fn closure(n_vars: usize, clauses: &[Vec<i32>], decisions: &[i32]) -> Closure {
    let mut assignment: Vec<Option<bool>> = vec![None; n_vars];
    let value =
        |a: &[Option<bool>], lit: i32| a[(lit.unsigned_abs() - 1) as usize].map(|v| v == (lit > 0));
    for &d in decisions {
        assignment[(d.unsigned_abs() - 1) as usize] = Some(d > 0);
    }
    loop {
        let mut changed = false;
        for c in clauses {
            if c.iter().any(|&l| value(&assignment, l) == Some(true)) {
                continue;
            }
            let free: Vec<i32> = c
                .iter()
                .copied()
                .filter(|&l| value(&assignment, l).is_none())
                .collect();
            match free.len() {
                0 => {
                    return Closure {
                        assignment,
                        conflict: true,
                    }
                }
                1 => {
                    assignment[(free[0].unsigned_abs() - 1) as usize] = Some(free[0] > 0);
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            return Closure {
                assignment,
                conflict: false,
            };
        }
    }
}
