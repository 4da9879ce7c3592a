//! Reader and writer for the NNet text format.
//!
//! Layout after the `//` comment block:
//!
//! ```text
//! numLayers,inputSize,outputSize,maxLayerSize,
//! size0,size1,...,sizeN,
//! 0,                          (unused flag)
//! mins / maxes / means / ranges (one line each)
//! per layer: one line per weight row, then one line per bias entry
//! ```
//!
//! Weights are stored raw; the normalization block is kept on the
//! [`Network`] and never applied implicitly.

use std::fmt::Write as _;

use crate::network::{Layer, Matrix, Network, NetworkError, Normalization};

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let mut inner = text.lines().enumerate().peekable();
        // Comments are only allowed in the leading block.
        while let Some((_, l)) = inner.peek() {
            let t = l.trim();
            if t.starts_with("//") || t.is_empty() {
                inner.next();
            } else {
                break;
            }
        }
        Self {
            inner,
            last_line: text.lines().count(),
        }
    }

    /// Next non-empty line as `(1-based line number, values)`.
    fn next_values(&mut self) -> Result<(usize, Vec<f64>), NetworkError> {
        loop {
            let Some((idx, line)) = self.inner.next() else {
                return Err(NetworkError::Truncated {
                    line: self.last_line + 1,
                });
            };
            let line_no = idx + 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let values = t
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>().map_err(|_| NetworkError::Parse {
                        line: line_no,
                        msg: format!("non-numeric token '{s}'"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok((line_no, values));
        }
    }

    fn exact(&mut self, n: usize, what: &str) -> Result<Vec<f64>, NetworkError> {
        let (line, v) = self.next_values()?;
        if v.len() != n {
            return Err(NetworkError::Parse {
                line,
                msg: format!("{what}: expected {n} values, found {}", v.len()),
            });
        }
        Ok(v)
    }

    fn at_least(&mut self, n: usize, what: &str) -> Result<Vec<f64>, NetworkError> {
        let (line, v) = self.next_values()?;
        if v.len() < n {
            return Err(NetworkError::Parse {
                line,
                msg: format!("{what}: expected at least {n} values, found {}", v.len()),
            });
        }
        Ok(v)
    }
}

fn as_count(v: f64, line: usize) -> Result<usize, NetworkError> {
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(NetworkError::Parse {
            line,
            msg: format!("expected a count, found {v}"),
        });
    }
    Ok(v as usize)
}

pub fn load_nnet(text: &str) -> Result<Network, NetworkError> {
    let mut lines = Lines::new(text);

    let (hline, header) = lines.next_values()?;
    if header.len() < 4 {
        return Err(NetworkError::Parse {
            line: hline,
            msg: "header needs 4 counts".into(),
        });
    }
    let num_layers = as_count(header[0], hline)?;
    let input_size = as_count(header[1], hline)?;
    let output_size = as_count(header[2], hline)?;
    if num_layers == 0 {
        return Err(NetworkError::Parse {
            line: hline,
            msg: "zero layers".into(),
        });
    }

    let (sline, raw_sizes) = lines.next_values()?;
    if raw_sizes.len() != num_layers + 1 {
        return Err(NetworkError::Parse {
            line: sline,
            msg: format!(
                "expected {} layer sizes, found {}",
                num_layers + 1,
                raw_sizes.len()
            ),
        });
    }
    let sizes = raw_sizes
        .iter()
        .map(|&v| as_count(v, sline))
        .collect::<Result<Vec<_>, _>>()?;
    if sizes[0] != input_size || sizes[num_layers] != output_size {
        return Err(NetworkError::Parse {
            line: sline,
            msg: "layer sizes disagree with header input/output size".into(),
        });
    }

    let _flag = lines.next_values()?;
    let mins = lines.exact(input_size, "input minimums")?;
    let maxes = lines.exact(input_size, "input maximums")?;
    let means = lines.at_least(input_size, "means")?;
    let ranges = lines.at_least(input_size, "ranges")?;

    let mut layers = Vec::with_capacity(num_layers);
    for k in 0..num_layers {
        let (rows, cols) = (sizes[k + 1], sizes[k]);
        let mut weights = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = lines.exact(cols, &format!("layer {k} weight row {r}"))?;
            for (c, v) in row.into_iter().enumerate() {
                weights.set(r, c, v);
            }
        }
        let mut bias = Vec::with_capacity(rows);
        for r in 0..rows {
            bias.push(lines.exact(1, &format!("layer {k} bias {r}"))?[0]);
        }
        layers.push(Layer {
            weights,
            bias,
            relu: k + 1 != num_layers,
        });
    }

    Ok(Network::new(layers)?.with_normalization(Normalization {
        mins,
        maxes,
        means,
        ranges,
    }))
}

pub fn write_nnet(net: &Network) -> String {
    let mut out = String::new();
    let layers = net.layers();
    let mut sizes = vec![net.input_dim()];
    sizes.extend(layers.iter().map(Layer::width));
    let max = sizes.iter().copied().max().unwrap_or(0);
    let join = |v: &[f64]| v.iter().map(|x| format!("{x},")).collect::<String>();

    out.push_str("// written by nncdcl\n");
    let _ = writeln!(
        out,
        "{},{},{},{},",
        layers.len(),
        net.input_dim(),
        net.output_dim(),
        max
    );
    let _ = writeln!(
        out,
        "{}",
        sizes.iter().map(|s| format!("{s},")).collect::<String>()
    );
    out.push_str("0,\n");
    let n = net.input_dim();
    let norm = net
        .normalization()
        .cloned()
        .unwrap_or_else(|| Normalization {
            mins: vec![-1.0; n],
            maxes: vec![1.0; n],
            means: vec![0.0; n + 1],
            ranges: vec![1.0; n + 1],
        });
    for block in [&norm.mins, &norm.maxes, &norm.means, &norm.ranges] {
        let _ = writeln!(out, "{}", join(block));
    }
    for layer in layers {
        for r in 0..layer.weights.rows() {
            let _ = writeln!(out, "{}", join(layer.weights.row(r)));
        }
        for b in &layer.bias {
            let _ = writeln!(out, "{b},");
        }
    }
    out
}
