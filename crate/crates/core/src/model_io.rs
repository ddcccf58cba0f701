//! Plain-text model files.
//!
//! ```text
//! survkan-model 1
//! created 2026-01-01T00:00:00Z
//! time_scale <t_max>
//! features <d>
//! feature <mean> <std> <name>        (d lines)
//! layers <L>
//! layer <in> <out>                   (then in*out edge lines, row-major)
//! edge <base> <active> <lower> <upper> <intervals> <w_b> <w_s> <coefficients...>
//! ```
//!
//! Every real is written with 17 significant digits, so loading reproduces
//! each parameter bit for bit. Only the `created` line varies between saves
//! of the same network.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::{num, parse_num};
use crate::kan::{BaseKind, EdgeFunction, FeatureNormalizer, KanLayer, KanNetwork};
use crate::splines::SplineGrid;

pub const MAGIC: &str = "survkan-model";
pub const VERSION: u32 = 1;

/// Serializes with the given `created` stamp.
pub fn model_to_string(net: &KanNetwork, created: &str) -> Result<String> {
    if created.contains('\n') {
        return Err(Error::Format("timestamp contains a newline".into()));
    }
    let mut s = String::new();
    writeln!(s, "{MAGIC} {VERSION}").unwrap();
    writeln!(s, "created {created}").unwrap();
    writeln!(s, "time_scale {}", num(net.time_scale())).unwrap();
    let norm = net.normalizer();
    writeln!(s, "features {}", norm.len()).unwrap();
    for k in 0..norm.len() {
        let name = &norm.names[k];
        if name.is_empty() || name.contains(['\n', '\r']) {
            return Err(Error::Format(format!("feature name {name:?} cannot be stored")));
        }
        writeln!(s, "feature {} {} {name}", num(norm.means[k]), num(norm.stds[k])).unwrap();
    }
    writeln!(s, "layers {}", net.layers().len()).unwrap();
    for layer in net.layers() {
        writeln!(s, "layer {} {}", layer.in_width(), layer.out_width()).unwrap();
        for e in layer.edges() {
            write!(
                s,
                "edge {} {} {} {} {} {} {}",
                e.base.name(),
                u8::from(e.active),
                num(e.grid.lower()),
                num(e.grid.upper()),
                e.grid.intervals(),
                num(e.base_weight),
                num(e.spline_weight)
            )
            .unwrap();
            for c in &e.coefficients {
                write!(s, " {}", num(*c)).unwrap();
            }
            s.push('\n');
        }
    }
    Ok(s)
}

pub fn now_stamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn save_model(net: &KanNetwork, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_string(net, &now_stamp())?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KanNetwork> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    model_from_str(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, keyword: &str) -> Result<(usize, &'a str)> {
        loop {
            let (k, line) = self
                .inner
                .next()
                .ok_or_else(|| Error::Format(format!("unexpected end of file, expected `{keyword}`")))?;
            if line.trim().is_empty() {
                continue;
            }
            let rest = line
                .strip_prefix(keyword)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::Format(format!("line {}: expected `{keyword}`", k + 1)))?;
            return Ok((k + 1, rest));
        }
    }
}

fn real(token: Option<&str>, line: usize) -> Result<f64> {
    token
        .and_then(parse_num)
        .ok_or_else(|| Error::Format(format!("line {line}: expected a number")))
}

fn count(token: Option<&str>, line: usize) -> Result<usize> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format(format!("line {line}: expected a count")))
}

fn fmt_err(line: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Format(format!("line {line}: {e}"))
}

pub fn model_from_str(text: &str) -> Result<KanNetwork> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (_, version) = lines.next(MAGIC)?;
    if version.trim() != VERSION.to_string() {
        return Err(Error::Format(format!("unsupported model version `{}`", version.trim())));
    }
    lines.next("created")?;
    let (ln, rest) = lines.next("time_scale")?;
    let time_scale = real(Some(rest.trim()), ln)?;

    let (ln, rest) = lines.next("features")?;
    let d = count(Some(rest.trim()), ln)?;
    let mut names = Vec::with_capacity(d);
    let mut means = Vec::with_capacity(d);
    let mut stds = Vec::with_capacity(d);
    for _ in 0..d {
        let (ln, rest) = lines.next("feature")?;
        let mut parts = rest.splitn(3, ' ');
        means.push(real(parts.next(), ln)?);
        stds.push(real(parts.next(), ln)?);
        let name = parts
            .next()
            .filter(|n| !n.is_empty())
            .ok_or_else(|| Error::Format(format!("line {ln}: missing feature name")))?;
        names.push(name.to_string());
    }
    if stds.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Format("feature scales must be positive".into()));
    }

    let (ln, rest) = lines.next("layers")?;
    let n_layers = count(Some(rest.trim()), ln)?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let (ln, rest) = lines.next("layer")?;
        let mut parts = rest.split_whitespace();
        let n_in = count(parts.next(), ln)?;
        let n_out = count(parts.next(), ln)?;
        let mut edges = Vec::with_capacity(n_in * n_out);
        for _ in 0..n_in * n_out {
            let (ln, rest) = lines.next("edge")?;
            edges.push(parse_edge(rest, ln)?);
        }
        layers.push(KanLayer::new(n_in, n_out, edges).map_err(fmt_err(ln))?);
    }
    if let Some((k, line)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::Format(format!("line {}: trailing content `{line}`", k + 1)));
    }
    let normalizer = FeatureNormalizer { names, means, stds };
    KanNetwork::new(layers, normalizer, time_scale).map_err(|e| Error::Format(e.to_string()))
}

fn parse_edge(rest: &str, ln: usize) -> Result<EdgeFunction> {
    let mut parts = rest.split_whitespace();
    let base = BaseKind::parse(parts.next().unwrap_or("")).map_err(fmt_err(ln))?;
    let active = match parts.next() {
        Some("1") => true,
        Some("0") => false,
        _ => return Err(Error::Format(format!("line {ln}: active flag must be 0 or 1"))),
    };
    let lower = real(parts.next(), ln)?;
    let upper = real(parts.next(), ln)?;
    let intervals = count(parts.next(), ln)?;
    let grid = SplineGrid::new(lower, upper, intervals).map_err(fmt_err(ln))?;
    let wb = real(parts.next(), ln)?;
    let ws = real(parts.next(), ln)?;
    let coefficients = parts
        .map(|t| real(Some(t), ln))
        .collect::<Result<Vec<_>>>()?;
    let mut edge = EdgeFunction::new(grid, coefficients, wb, ws, base).map_err(fmt_err(ln))?;
    edge.active = active;
    Ok(edge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kan::Architecture;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64, hidden: usize, base: BaseKind) -> KanNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random::<f64>() * 100.0, rng.random()]).collect();
        let names = vec!["age years".to_string(), "grade=II".to_string()];
        let norm = FeatureNormalizer::fit(&rows, &names).unwrap();
        let samples: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut z = norm.normalize(r);
                z.push(rng.random());
                z
            })
            .collect();
        let arch = Architecture {
            hidden,
            grid_intervals: 4,
            base,
        };
        let mut net = KanNetwork::initialize(arch, norm, 1234.5678, &samples, &mut rng).unwrap();
        net.layers_mut()[0].edge_mut(0, 1).deactivate();
        net
    }

    #[test]
    fn roundtrip_is_exact() {
        for (seed, hidden, base) in [(1, 0, BaseKind::Silu), (2, 2, BaseKind::Identity), (3, 3, BaseKind::Silu)] {
            let net = random_model(seed, hidden, base);
            let text = model_to_string(&net, "2026-01-01T00:00:00Z").unwrap();
            let back = model_from_str(&text).unwrap();
            assert_eq!(back, net);
            assert_eq!(model_to_string(&back, "2026-01-01T00:00:00Z").unwrap(), text);
        }
    }

    #[test]
    fn stamp_is_the_only_difference() {
        let net = random_model(4, 1, BaseKind::Silu);
        let a = model_to_string(&net, "x").unwrap();
        let b = model_to_string(&net, "y").unwrap();
        let diff: Vec<_> = a.lines().zip(b.lines()).filter(|(p, q)| p != q).collect();
        assert_eq!(diff, vec![("created x", "created y")]);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let text = model_to_string(&random_model(5, 1, BaseKind::Silu), "t").unwrap();
        assert!(model_from_str(&text.replace("survkan-model 1", "survkan-model 9")).is_err());
        assert!(model_from_str(&text.replace("edge silu 1", "edge relu 1")).is_err());
        let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(matches!(model_from_str(&truncated), Err(Error::Format(_))));
        assert!(model_from_str(&format!("{text}junk\n")).is_err());
        assert!(matches!(load_model("/nonexistent/model.txt"), Err(Error::NotFound(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn perturbed_parameters_roundtrip(seed in 0u64..1000, scale in -1e12f64..1e12) {
            let mut net = random_model(seed, 1, BaseKind::Silu);
            let mut p = net.parameters();
            for (k, v) in p.iter_mut().enumerate() {
                *v *= scale / (k as f64 + 1.0);
            }
            net.set_parameters(&p).unwrap();
            let back = model_from_str(&model_to_string(&net, "t").unwrap()).unwrap();
            prop_assert_eq!(back.parameters(), net.parameters());
        }
    }
}
