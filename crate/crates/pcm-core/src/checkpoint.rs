//! Textual model checkpoints that round-trip bitwise.
//!
//! Layout: a `pcmmodel v1` magic line, then one node. A node is a header
//! line (`<tag> key=value ...`) followed by its body. Leaf networks carry a
//! `params=<count>` field and one parameter per line as the 16-digit hex
//! IEEE-754 bit pattern, in declaration order (layers: weights row-major
//! then bias; terms: slope then offset). Composite nodes nest their
//! children directly:
//!
//! - `fnn activation=<tanh|relu> dims=<d0,d1,..> params=<n>`
//! - `ma dim=<n> terms=<i> params=<n>`
//! - `lse dim=<n> terms=<i> temperature=<hex> params=<n>`
//! - `plse x_dim=<n> u_dim=<m> terms=<i> plus=<0|1> temperature=<hex>`
//!   followed by the slope subnets then the offset subnets as `fnn` nodes
//! - `dlse` followed by two `lse` nodes
//! - `eplse u_lower=<hex,..> u_upper=<hex,..> grad_tol=<hex> max_iters=<n>
//!   use_newton=<0|1> armijo_c=<hex> armijo_shrink=<hex> multistart=<n>`
//!   followed by a `plse` node and an `fnn` node

use crate::approximators::{
    Activation, AffineTerm, Approximator, DlseNet, Fnn, LseNet, MaNet, PlseNet,
};
use crate::pcm::EplseModel;
use crate::solve::{BoxSet, SolverOpts};
use std::io::{self, BufRead, Write};
use thiserror::Error;

const MAGIC: &str = "pcmmodel v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn f64_to_hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

struct Reader<R> {
    inner: R,
    line_no: usize,
}

impl<R: BufRead> Reader<R> {
    fn new(inner: R) -> Self {
        Reader { inner, line_no: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Parse {
            line: self.line_no,
            msg: msg.into(),
        }
    }

    fn next_line(&mut self) -> Result<String, CheckpointError> {
        let mut buf = String::new();
        let n = self.inner.read_line(&mut buf)?;
        self.line_no += 1;
        if n == 0 {
            return Err(self.err("unexpected end of file"));
        }
        Ok(buf.trim_end().to_string())
    }

    fn hex_f64(&self, tok: &str) -> Result<f64, CheckpointError> {
        u64::from_str_radix(tok, 16)
            .map(f64::from_bits)
            .map_err(|_| self.err(format!("bad f64 bits `{tok}`")))
    }

    fn params(&mut self, count: usize) -> Result<Vec<f64>, CheckpointError> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let line = self.next_line()?;
            out.push(self.hex_f64(line.trim())?);
        }
        Ok(out)
    }
}

/// `tag k1=v1 k2=v2 ...` into (tag, lookup).
fn split_header(line: &str) -> (&str, Vec<(&str, &str)>) {
    let mut it = line.split_whitespace();
    let tag = it.next().unwrap_or("");
    let kvs = it.filter_map(|tok| tok.split_once('=')).collect();
    (tag, kvs)
}

fn field<'a>(
    kvs: &[(&'a str, &'a str)],
    key: &str,
    rd_line: usize,
) -> Result<&'a str, CheckpointError> {
    kvs.iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or(CheckpointError::Parse {
            line: rd_line,
            msg: format!("missing field `{key}`"),
        })
}

fn write_fnn(w: &mut impl Write, net: &Fnn) -> io::Result<()> {
    let dims: Vec<String> = net.dims().iter().map(|d| d.to_string()).collect();
    let act = match net.activation {
        Activation::Tanh => "tanh",
        Activation::Relu => "relu",
    };
    writeln!(
        w,
        "fnn activation={} dims={} params={}",
        act,
        dims.join(","),
        net.param_count()
    )?;
    let mut flat = Vec::with_capacity(net.param_count());
    net.copy_params_to(&mut flat);
    for v in flat {
        writeln!(w, "{}", f64_to_hex(v))?;
    }
    Ok(())
}

fn write_lse(w: &mut impl Write, net: &LseNet) -> io::Result<()> {
    writeln!(
        w,
        "lse dim={} terms={} temperature={} params={}",
        net.input_dim(),
        net.term_count(),
        f64_to_hex(net.temperature),
        net.param_count()
    )?;
    let mut flat = Vec::with_capacity(net.param_count());
    net.copy_params_to(&mut flat);
    for v in flat {
        writeln!(w, "{}", f64_to_hex(v))?;
    }
    Ok(())
}

fn write_ma(w: &mut impl Write, net: &MaNet) -> io::Result<()> {
    let dim = net.input_dim();
    let count = net.terms.len() * (dim + 1);
    writeln!(w, "ma dim={} terms={} params={}", dim, net.terms.len(), count)?;
    for t in &net.terms {
        for v in &t.a {
            writeln!(w, "{}", f64_to_hex(*v))?;
        }
        writeln!(w, "{}", f64_to_hex(t.b))?;
    }
    Ok(())
}

fn write_plse(w: &mut impl Write, net: &PlseNet) -> io::Result<()> {
    writeln!(
        w,
        "plse x_dim={} u_dim={} terms={} plus={} temperature={}",
        net.x_dim(),
        net.u_dim(),
        net.term_count(),
        u8::from(net.plus_constrained()),
        f64_to_hex(net.temperature)
    )?;
    for sub in net.slope_subnets() {
        write_fnn(w, sub)?;
    }
    for sub in net.offset_subnets() {
        write_fnn(w, sub)?;
    }
    Ok(())
}

fn hex_list(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| f64_to_hex(*v))
        .collect::<Vec<_>>()
        .join(",")
}

fn write_eplse(w: &mut impl Write, model: &EplseModel) -> io::Result<()> {
    let o = &model.solver_opts;
    writeln!(
        w,
        "eplse u_lower={} u_upper={} grad_tol={} max_iters={} use_newton={} armijo_c={} armijo_shrink={} multistart={}",
        hex_list(model.u_box.lower()),
        hex_list(model.u_box.upper()),
        f64_to_hex(o.grad_tol),
        o.max_iters,
        u8::from(o.use_newton),
        f64_to_hex(o.armijo_c),
        f64_to_hex(o.armijo_shrink),
        o.multistart_count
    )?;
    write_plse(w, &model.pcm)?;
    write_fnn(w, &model.gap)
}

/// Serializes a standalone network.
pub fn write_approximator(w: &mut impl Write, net: &Approximator) -> io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    match net {
        Approximator::Fnn(n) => write_fnn(w, n),
        Approximator::Ma(n) => write_ma(w, n),
        Approximator::Lse(n) => write_lse(w, n),
        Approximator::Plse(n) => write_plse(w, n),
        Approximator::Dlse(n) => {
            writeln!(w, "dlse")?;
            write_lse(w, &n.pos)?;
            write_lse(w, &n.neg)
        }
    }
}

/// Serializes the minorant-gap model with its box and solver options.
pub fn write_eplse_model(w: &mut impl Write, model: &EplseModel) -> io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    write_eplse(w, model)
}

fn read_usize(rd: &Reader<impl BufRead>, tok: &str) -> Result<usize, CheckpointError> {
    tok.parse()
        .map_err(|_| rd.err(format!("bad integer `{tok}`")))
}

fn read_fnn_at(rd: &mut Reader<impl BufRead>, header: &str) -> Result<Fnn, CheckpointError> {
    let (tag, kvs) = split_header(header);
    if tag != "fnn" {
        return Err(rd.err(format!("expected fnn node, found `{tag}`")));
    }
    let activation = match field(&kvs, "activation", rd.line_no)? {
        "tanh" => Activation::Tanh,
        "relu" => Activation::Relu,
        other => return Err(rd.err(format!("unknown activation `{other}`"))),
    };
    let dims: Vec<usize> = field(&kvs, "dims", rd.line_no)?
        .split(',')
        .map(|d| read_usize(rd, d))
        .collect::<Result<_, _>>()?;
    let count = read_usize(rd, field(&kvs, "params", rd.line_no)?)?;
    let mut net = Fnn::zeros(&dims, activation);
    if net.param_count() != count {
        return Err(rd.err(format!(
            "param count {count} does not match dims {dims:?}"
        )));
    }
    let flat = rd.params(count)?;
    net.set_params_from(&flat);
    Ok(net)
}

fn read_fnn(rd: &mut Reader<impl BufRead>) -> Result<Fnn, CheckpointError> {
    let header = rd.next_line()?;
    read_fnn_at(rd, &header)
}

fn terms_from_flat(flat: &[f64], dim: usize) -> Vec<AffineTerm> {
    flat.chunks(dim + 1)
        .map(|c| AffineTerm::new(c[..dim].to_vec(), c[dim]))
        .collect()
}

fn read_lse_at(rd: &mut Reader<impl BufRead>, header: &str) -> Result<LseNet, CheckpointError> {
    let (tag, kvs) = split_header(header);
    if tag != "lse" {
        return Err(rd.err(format!("expected lse node, found `{tag}`")));
    }
    let dim = read_usize(rd, field(&kvs, "dim", rd.line_no)?)?;
    let terms = read_usize(rd, field(&kvs, "terms", rd.line_no)?)?;
    let temperature = rd.hex_f64(field(&kvs, "temperature", rd.line_no)?)?;
    let count = read_usize(rd, field(&kvs, "params", rd.line_no)?)?;
    if count != terms * (dim + 1) {
        return Err(rd.err("lse param count mismatch".to_string()));
    }
    let flat = rd.params(count)?;
    LseNet::new(terms_from_flat(&flat, dim), temperature)
        .map_err(|e| rd.err(format!("invalid lse: {e}")))
}

fn read_lse(rd: &mut Reader<impl BufRead>) -> Result<LseNet, CheckpointError> {
    let header = rd.next_line()?;
    read_lse_at(rd, &header)
}

fn read_plse_at(rd: &mut Reader<impl BufRead>, header: &str) -> Result<PlseNet, CheckpointError> {
    let (tag, kvs) = split_header(header);
    if tag != "plse" {
        return Err(rd.err(format!("expected plse node, found `{tag}`")));
    }
    let terms = read_usize(rd, field(&kvs, "terms", rd.line_no)?)?;
    let plus = field(&kvs, "plus", rd.line_no)? == "1";
    let temperature = rd.hex_f64(field(&kvs, "temperature", rd.line_no)?)?;
    let n_slopes = terms - usize::from(plus);
    let slopes: Vec<Fnn> = (0..n_slopes)
        .map(|_| read_fnn(rd))
        .collect::<Result<_, _>>()?;
    let offsets: Vec<Fnn> = (0..terms)
        .map(|_| read_fnn(rd))
        .collect::<Result<_, _>>()?;
    PlseNet::new(slopes, offsets, temperature, plus).map_err(|e| rd.err(format!("invalid plse: {e}")))
}

fn hexes(rd: &Reader<impl BufRead>, tok: &str) -> Result<Vec<f64>, CheckpointError> {
    tok.split(',').map(|t| rd.hex_f64(t)).collect()
}

/// Reads a standalone network written by [`write_approximator`].
pub fn read_approximator(r: impl BufRead) -> Result<Approximator, CheckpointError> {
    let mut rd = Reader::new(r);
    let magic = rd.next_line()?;
    if magic != MAGIC {
        return Err(rd.err(format!("bad magic `{magic}`")));
    }
    let header = rd.next_line()?;
    let (tag, kvs) = split_header(&header);
    match tag {
        "fnn" => Ok(Approximator::Fnn(read_fnn_at(&mut rd, &header)?)),
        "lse" => Ok(Approximator::Lse(read_lse_at(&mut rd, &header)?)),
        "plse" => Ok(Approximator::Plse(read_plse_at(&mut rd, &header)?)),
        "ma" => {
            let dim = read_usize(&rd, field(&kvs, "dim", rd.line_no)?)?;
            let terms = read_usize(&rd, field(&kvs, "terms", rd.line_no)?)?;
            let count = read_usize(&rd, field(&kvs, "params", rd.line_no)?)?;
            if count != terms * (dim + 1) {
                return Err(rd.err("ma param count mismatch".to_string()));
            }
            let flat = rd.params(count)?;
            MaNet::new(terms_from_flat(&flat, dim))
                .map(Approximator::Ma)
                .map_err(|e| rd.err(format!("invalid ma: {e}")))
        }
        "dlse" => {
            let pos = read_lse(&mut rd)?;
            let neg = read_lse(&mut rd)?;
            DlseNet::new(pos, neg)
                .map(Approximator::Dlse)
                .map_err(|e| rd.err(format!("invalid dlse: {e}")))
        }
        other => Err(rd.err(format!("unknown node tag `{other}`"))),
    }
}

/// Reads a model written by [`write_eplse_model`].
pub fn read_eplse_model(r: impl BufRead) -> Result<EplseModel, CheckpointError> {
    let mut rd = Reader::new(r);
    let magic = rd.next_line()?;
    if magic != MAGIC {
        return Err(rd.err(format!("bad magic `{magic}`")));
    }
    let header = rd.next_line()?;
    let (tag, kvs) = split_header(&header);
    if tag != "eplse" {
        return Err(rd.err(format!("expected eplse node, found `{tag}`")));
    }
    let lower = hexes(&rd, field(&kvs, "u_lower", rd.line_no)?)?;
    let upper = hexes(&rd, field(&kvs, "u_upper", rd.line_no)?)?;
    let opts = SolverOpts {
        grad_tol: rd.hex_f64(field(&kvs, "grad_tol", rd.line_no)?)?,
        max_iters: read_usize(&rd, field(&kvs, "max_iters", rd.line_no)?)?,
        use_newton: field(&kvs, "use_newton", rd.line_no)? == "1",
        armijo_c: rd.hex_f64(field(&kvs, "armijo_c", rd.line_no)?)?,
        armijo_shrink: rd.hex_f64(field(&kvs, "armijo_shrink", rd.line_no)?)?,
        multistart_count: read_usize(&rd, field(&kvs, "multistart", rd.line_no)?)?,
    };
    let pcm_header = rd.next_line()?;
    let pcm = read_plse_at(&mut rd, &pcm_header)?;
    let gap = read_fnn(&mut rd)?;
    EplseModel::new(pcm, gap, BoxSet::new(lower, upper), opts)
        .map_err(|e| rd.err(format!("invalid model: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximators::{init_network, NetSpec};
    use crate::numerics::{named_stream, RngSeed};
    use crate::solve::SolverOpts;

    fn roundtrip(net: &Approximator) -> Approximator {
        let mut buf = Vec::new();
        write_approximator(&mut buf, net).unwrap();
        read_approximator(buf.as_slice()).unwrap()
    }

    fn flat(net: &Approximator) -> Vec<u64> {
        let mut out = Vec::new();
        match net {
            Approximator::Fnn(n) => n.copy_params_to(&mut out),
            Approximator::Ma(n) => {
                for t in &n.terms {
                    out.extend_from_slice(&t.a);
                    out.push(t.b);
                }
            }
            Approximator::Lse(n) => n.copy_params_to(&mut out),
            Approximator::Plse(n) => n.copy_params_to(&mut out),
            Approximator::Dlse(n) => n.copy_params_to(&mut out),
        }
        out.into_iter().map(f64::to_bits).collect()
    }

    #[test]
    fn every_network_kind_roundtrips_bitwise() {
        let specs = vec![
            NetSpec::Fnn {
                dims: vec![3, 8, 2],
                activation: crate::approximators::Activation::Tanh,
            },
            NetSpec::Ma {
                input_dim: 2,
                terms: 5,
            },
            NetSpec::Lse {
                input_dim: 2,
                terms: 4,
                temperature: 0.37,
            },
            NetSpec::Plse {
                x_dim: 2,
                u_dim: 3,
                terms: 4,
                temperature: 1.0,
                hidden: vec![6, 6],
                plus_constrained: true,
            },
            NetSpec::Dlse {
                input_dim: 3,
                terms: 4,
                temperature: 2.0,
            },
        ];
        for spec in specs {
            let net = init_network(&spec, RngSeed(99)).unwrap();
            let back = roundtrip(&net);
            assert_eq!(flat(&net), flat(&back), "{spec:?}");
        }
    }

    #[test]
    fn checkpoint_text_is_stable() {
        // writing twice yields identical bytes (manifest-style determinism)
        let net = init_network(
            &NetSpec::Lse {
                input_dim: 2,
                terms: 3,
                temperature: 1.5,
            },
            RngSeed(7),
        )
        .unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_approximator(&mut a, &net).unwrap();
        write_approximator(&mut b, &net).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eplse_model_roundtrips_bitwise() {
        let mut rng = named_stream(RngSeed(13), "ckpt-model");
        let model = EplseModel::init(
            2,
            2,
            4,
            1.0,
            &[6],
            &[8],
            BoxSet::new(vec![-1.0, -0.5], vec![1.0, 0.25]),
            SolverOpts::default().with_grad_tol(1e-9),
            &mut rng,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_eplse_model(&mut buf, &model).unwrap();
        let back = read_eplse_model(buf.as_slice()).unwrap();
        let mut pa = Vec::new();
        let mut pb = Vec::new();
        model.copy_params_to(&mut pa);
        back.copy_params_to(&mut pb);
        assert_eq!(
            pa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            pb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(model.u_box, back.u_box);
        assert_eq!(model.solver_opts, back.solver_opts);
    }

    #[test]
    fn truncated_file_reports_line_numbers() {
        let net = init_network(
            &NetSpec::Lse {
                input_dim: 1,
                terms: 2,
                temperature: 1.0,
            },
            RngSeed(3),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_approximator(&mut buf, &net).unwrap();
        buf.truncate(buf.len() - 20);
        match read_approximator(buf.as_slice()) {
            Err(CheckpointError::Parse { line, .. }) => assert!(line > 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
