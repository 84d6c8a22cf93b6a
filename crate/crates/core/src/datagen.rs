//! Instance generators with hidden ground truth for every task, plus XOR
//! secret-sharing utilities.
//!
//! Generators are pure functions of their seed. A generated instance
//! separates what protocols may see (curator records, agent records, shared
//! auxiliary words) from the hidden truth used only for scoring; protocols
//! receive the former and never the latter.
//!
//! Records are packed into single u64 words; the per-task layouts are
//! defined by the `*_pack` / accessor helpers below so that generators,
//! protocols, and tests agree on bit positions.

use rand::Rng;

use crate::curator::parity_of;
use crate::engine::RngStream;
use crate::{Error, Result};

/// XOR secret sharing: all shares XOR to the secret; every proper subset is
/// jointly uniform.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareVector {
    pub shares: Vec<u64>,
    pub secret: u64,
}

/// Splits `secret` into `m_plus_1` shares whose XOR is the secret.
pub fn xor_share(secret: u64, m_plus_1: usize, rng: &mut RngStream) -> Result<ShareVector> {
    if m_plus_1 == 0 {
        return Err(Error::InvalidConfig("share count must be at least 1".into()));
    }
    let mut shares: Vec<u64> = (0..m_plus_1 - 1).map(|_| rng.random()).collect();
    let partial = shares.iter().fold(0u64, |a, &s| a ^ s);
    shares.push(secret ^ partial);
    Ok(ShareVector { shares, secret })
}

/// XOR of all shares.
pub fn xor_reconstruct(shares: &[u64]) -> u64 {
    shares.iter().fold(0u64, |a, &s| a ^ s)
}

/// Marginal distribution of the threshold-part value y.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Marginal {
    Uniform,
    /// Half the mass on a single point, the rest uniform; exercises the
    /// padding path that makes sorted values distinct.
    PointHeavy,
}

impl Marginal {
    pub fn name(self) -> &'static str {
        match self {
            Marginal::Uniform => "uniform",
            Marginal::PointHeavy => "point-heavy",
        }
    }

    pub fn from_name(s: &str) -> Option<Marginal> {
        match s {
            "uniform" => Some(Marginal::Uniform),
            "point-heavy" => Some(Marginal::PointHeavy),
            _ => None,
        }
    }

    fn sample(self, b: u32, rng: &mut RngStream) -> u64 {
        match self {
            Marginal::Uniform => rng.random_range(0..(1u64 << b)),
            Marginal::PointHeavy => {
                if rng.random_bool(0.5) {
                    1u64 << (b - 1)
                } else {
                    rng.random_range(0..(1u64 << b))
                }
            }
        }
    }
}

/// Hidden ground truth of a generated instance, stored in the sidecar file
/// and consulted only by scorers.
#[derive(Clone, Debug, PartialEq)]
pub enum GroundTruth {
    /// Target concept Par_k*(x) XOR Thr_t*(y) (and its concatenated form).
    ParityThresh { k_star: u64, t_star: u64 },
    /// Secret index s, its table, and the answer r_s.
    OneOut { r_table: Vec<u64>, s: u64, r_s: u64 },
    /// Hidden parity vector r and the secret bit s_r it selects.
    Pcs { r: u64, s_r: u8 },
    /// Coordinate-wise means of the record distribution.
    Select { mu: Vec<f64> },
    /// Which of the two biased distributions generated the records.
    Hypo { j: u8, alpha: f64 },
}

/// Generated input for one task: visible records plus hidden truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance {
    pub task: String,
    /// Generation parameters in a fixed order, serialized into the header.
    pub params: Vec<(String, String)>,
    pub seed: u64,
    pub curator_records: Vec<u64>,
    pub agent_records: Vec<u64>,
    /// Instance-level words visible to every party (e.g. the
    /// parity-chooses-secret share table).
    pub aux: Vec<u64>,
    pub truth: GroundTruth,
}

impl TaskInstance {
    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn param_u64(&self, key: &str) -> Option<u64> {
        self.param(key)?.parse().ok()
    }
}

// Parity-threshold / concatenation record layout:
// bits [0, c) = x, [c, c+b) = y, bit c+b = parity label, bit c+b+1 =
// threshold label. The combined label is the XOR of the two label bits.

pub fn pt_pack(x: u64, y: u64, par: u8, thr: u8, b: u32, c: u32) -> u64 {
    debug_assert!(c + b + 2 <= 64);
    x | (y << c) | ((par as u64) << (c + b)) | ((thr as u64) << (c + b + 1))
}

pub fn pt_x(r: u64, c: u32) -> u64 {
    r & ((1 << c) - 1)
}

pub fn pt_y(r: u64, b: u32, c: u32) -> u64 {
    (r >> c) & ((1 << b) - 1)
}

pub fn pt_par(r: u64, b: u32, c: u32) -> u8 {
    ((r >> (c + b)) & 1) as u8
}

pub fn pt_thr(r: u64, b: u32, c: u32) -> u8 {
    ((r >> (c + b + 1)) & 1) as u8
}

/// Labels one point under the target concept.
pub fn pt_label(x: u64, y: u64, k_star: u64, t_star: u64) -> (u8, u8) {
    (parity_of(k_star, x), u8::from(y >= t_star))
}

/// Generates a parity-threshold (or concatenation) instance: m curator and
/// n agent records drawn i.i.d., labeled exactly by (k_star, t_star).
#[allow(clippy::too_many_arguments)]
pub fn gen_parity_thresh(
    b: u32,
    c: u32,
    m: u64,
    n: u64,
    k_star: u64,
    t_star: u64,
    marginal: Marginal,
    seed: u64,
) -> Result<TaskInstance> {
    if b == 0 || b > 24 || c == 0 || c > 20 || c + b + 2 > 64 {
        return Err(Error::InvalidConfig(format!("unsupported sizes b = {b}, c = {c}")));
    }
    if k_star >= (1 << c) || t_star > (1 << b) {
        return Err(Error::InvalidConfig("target outside its domain".into()));
    }
    let mut rng = RngStream::for_datagen(seed, 0);
    let draw = |rng: &mut RngStream| {
        let x = rng.random_range(0..(1u64 << c));
        let y = marginal.sample(b, rng);
        let (par, thr) = pt_label(x, y, k_star, t_star);
        pt_pack(x, y, par, thr, b, c)
    };
    let curator_records: Vec<u64> = (0..m).map(|_| draw(&mut rng)).collect();
    let agent_records: Vec<u64> = (0..n).map(|_| draw(&mut rng)).collect();
    Ok(TaskInstance {
        task: "parity-thresh".into(),
        params: vec![
            ("b".into(), b.to_string()),
            ("c".into(), c.to_string()),
            ("m".into(), m.to_string()),
            ("n".into(), n.to_string()),
            ("marginal".into(), marginal.name().into()),
        ],
        seed,
        curator_records,
        agent_records,
        aux: Vec::new(),
        truth: GroundTruth::ParityThresh { k_star, t_star },
    })
}

/// Same joint distribution and record layout as [`gen_parity_thresh`], but
/// registered under the concatenation task (whose hypotheses score the two
/// label bits as a pair rather than their XOR).
#[allow(clippy::too_many_arguments)]
pub fn gen_concat(
    b: u32,
    c: u32,
    m: u64,
    n: u64,
    k_star: u64,
    t_star: u64,
    marginal: Marginal,
    seed: u64,
) -> Result<TaskInstance> {
    let mut instance = gen_parity_thresh(b, c, m, n, k_star, t_star, marginal, seed)?;
    instance.task = "concat".into();
    Ok(instance)
}

// One-out-of-2^d record layout: bit 0 selects the branch.
// Share branch (bit 0 = 1): bits [1, 17) = t, bits [17, 17+d) = s_t.
// Parity branch (bit 0 = 0): bits [1, 1+c) = x, bits [1+c, 1+c+2^d) = the
// inner products <x, r_j> for every j.

pub fn oo_is_share(r: u64) -> bool {
    r & 1 == 1
}

pub fn oo_t(r: u64) -> u64 {
    (r >> 1) & 0xffff
}

pub fn oo_share(r: u64, d: u32) -> u64 {
    (r >> 17) & ((1 << d) - 1)
}

pub fn oo_x(r: u64, c: u32) -> u64 {
    (r >> 1) & ((1 << c) - 1)
}

pub fn oo_product(r: u64, c: u32, j: u64) -> u8 {
    ((r >> (1 + c as u64 + j)) & 1) as u8
}

pub fn oo_pack_share(t: u64, s_t: u64) -> u64 {
    1 | (t << 1) | (s_t << 17)
}

pub fn oo_pack_parity(x: u64, products: u64, c: u32) -> u64 {
    (x << 1) | (products << (1 + c))
}

/// Generates a one-out-of-2^d-parities instance. Every record, curator and
/// agent alike, is an independent draw: with probability 1/2 a share record
/// (t, s_t) with t uniform, else a uniform x with all 2^d inner products.
pub fn gen_one_out(d: u32, c: u32, m: u64, n: u64, seed: u64) -> Result<TaskInstance> {
    if c == 0 || c > 20 || d > 5 || 1 + c as u64 + (1 << d) > 64 {
        return Err(Error::InvalidConfig(format!("unsupported sizes d = {d}, c = {c}")));
    }
    if m + 1 > 0xffff {
        return Err(Error::InvalidConfig("m too large for the record layout".into()));
    }
    let mut rng = RngStream::for_datagen(seed, 0);
    let table_size = 1u64 << d;
    let r_table: Vec<u64> = (0..table_size).map(|_| rng.random_range(0..(1u64 << c))).collect();
    let mask_d = if d == 0 { 0 } else { (1u64 << d) - 1 };
    let shares: Vec<u64> = (0..=m).map(|_| rng.random::<u64>() & mask_d).collect();
    let s = xor_reconstruct(&shares);
    let r_s = r_table[s as usize];
    let draw = |rng: &mut RngStream| {
        if rng.random_bool(0.5) {
            let t = rng.random_range(0..=m);
            oo_pack_share(t, shares[t as usize])
        } else {
            let x = rng.random_range(0..(1u64 << c));
            let mut products = 0u64;
            for (j, &r_j) in r_table.iter().enumerate() {
                products |= (parity_of(r_j, x) as u64) << j;
            }
            oo_pack_parity(x, products, c)
        }
    };
    let curator_records: Vec<u64> = (0..m).map(|_| draw(&mut rng)).collect();
    let agent_records: Vec<u64> = (0..n).map(|_| draw(&mut rng)).collect();
    Ok(TaskInstance {
        task: "one-out".into(),
        params: vec![
            ("d".into(), d.to_string()),
            ("c".into(), c.to_string()),
            ("m".into(), m.to_string()),
            ("n".into(), n.to_string()),
        ],
        seed,
        curator_records,
        agent_records,
        aux: Vec::new(),
        truth: GroundTruth::OneOut { r_table, s, r_s },
    })
}

// Parity-chooses-secret record layout: bits [0, c) = x, bit c = <x, r>,
// bits [c+1, c+17) = t. The share table s_{j,t} is identical in every
// record, so it is carried once as instance auxiliary words: column t
// occupies `pcs_words_per_t(c)` consecutive u64 words of j-indexed bits.

pub fn pcs_pack(x: u64, label: u8, t: u64, c: u32) -> u64 {
    x | ((label as u64) << c) | (t << (c + 1))
}

pub fn pcs_x(r: u64, c: u32) -> u64 {
    r & ((1 << c) - 1)
}

pub fn pcs_label(r: u64, c: u32) -> u8 {
    ((r >> c) & 1) as u8
}

pub fn pcs_t(r: u64, c: u32) -> u64 {
    (r >> (c + 1)) & 0xffff
}

pub fn pcs_words_per_t(c: u32) -> usize {
    (1usize << c).div_ceil(64)
}

/// Share bit s_{j,t} from the packed table.
pub fn pcs_table_bit(aux: &[u64], c: u32, t: u64, j: u64) -> u8 {
    let wpt = pcs_words_per_t(c) as u64;
    ((aux[(t * wpt + j / 64) as usize] >> (j % 64)) & 1) as u8
}

/// Generates a parity-chooses-secret instance: per-j secrets are shared
/// into m+1 single-bit shares; every record carries a uniform x, its label
/// <x, r>, and a uniform share index t.
pub fn gen_pcs(c: u32, m: u64, n: u64, seed: u64) -> Result<TaskInstance> {
    if c == 0 || c > 16 || c as u64 + 17 > 64 {
        return Err(Error::InvalidConfig(format!("unsupported size c = {c}")));
    }
    if m + 1 > 0xffff {
        return Err(Error::InvalidConfig("m too large for the record layout".into()));
    }
    let mut rng = RngStream::for_datagen(seed, 0);
    let r = rng.random_range(0..(1u64 << c));
    let wpt = pcs_words_per_t(c);
    let mut aux = vec![0u64; wpt * (m as usize + 1)];
    for word in aux.iter_mut() {
        *word = rng.random();
    }
    if (1usize << c) % 64 != 0 {
        let tail_mask = (1u64 << ((1usize << c) % 64)) - 1;
        for t in 0..=(m as usize) {
            aux[t * wpt + wpt - 1] &= tail_mask;
        }
    }
    let s_r = (0..=m).fold(0u8, |acc, t| acc ^ pcs_table_bit(&aux, c, t, r));
    let draw = |rng: &mut RngStream| {
        let x = rng.random_range(0..(1u64 << c));
        let t = rng.random_range(0..=m);
        pcs_pack(x, parity_of(r, x), t, c)
    };
    let curator_records: Vec<u64> = (0..m).map(|_| draw(&mut rng)).collect();
    let agent_records: Vec<u64> = (0..n).map(|_| draw(&mut rng)).collect();
    Ok(TaskInstance {
        task: "pcs".into(),
        params: vec![
            ("c".into(), c.to_string()),
            ("m".into(), m.to_string()),
            ("n".into(), n.to_string()),
        ],
        seed,
        curator_records,
        agent_records,
        aux,
        truth: GroundTruth::Pcs { r, s_r },
    })
}

/// Generates a select-then-estimate instance: every record is a vector in
/// {-1,1}^d packed as a bitmask (bit j set = +1), coordinates independent
/// with means `mu`.
pub fn gen_select(d: u32, mu: &[f64], m: u64, n: u64, seed: u64) -> Result<TaskInstance> {
    if d == 0 || d > 64 || mu.len() != d as usize {
        return Err(Error::InvalidConfig(format!("mu must have length d = {d}")));
    }
    if mu.iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
        return Err(Error::InvalidConfig("mu outside [-1, 1]".into()));
    }
    let mut rng = RngStream::for_datagen(seed, 0);
    let draw = |rng: &mut RngStream| {
        let mut mask = 0u64;
        for (j, &mu_j) in mu.iter().enumerate() {
            if rng.random_bool((1.0 + mu_j) / 2.0) {
                mask |= 1 << j;
            }
        }
        mask
    };
    let curator_records: Vec<u64> = (0..m).map(|_| draw(&mut rng)).collect();
    let agent_records: Vec<u64> = (0..n).map(|_| draw(&mut rng)).collect();
    Ok(TaskInstance {
        task: "select-estimate".into(),
        params: vec![
            ("d".into(), d.to_string()),
            ("m".into(), m.to_string()),
            ("n".into(), n.to_string()),
        ],
        seed,
        curator_records,
        agent_records,
        aux: Vec::new(),
        truth: GroundTruth::Select { mu: mu.to_vec() },
    })
}

/// Generates a hypothesis-testing instance: records are i.i.d. bits with
/// P[1] = (1 + alpha)/2 under j = 1 and (1 - alpha)/2 under j = 0.
pub fn gen_hypo(alpha: f64, j: u8, m: u64, n: u64, seed: u64) -> Result<TaskInstance> {
    if !(0.0..=1.0).contains(&alpha) || j > 1 {
        return Err(Error::InvalidConfig("alpha must be in [0,1] and j binary".into()));
    }
    let p1 = if j == 1 { (1.0 + alpha) / 2.0 } else { (1.0 - alpha) / 2.0 };
    let mut rng = RngStream::for_datagen(seed, 0);
    let draw = |rng: &mut RngStream| u64::from(rng.random_bool(p1));
    let curator_records: Vec<u64> = (0..m).map(|_| draw(&mut rng)).collect();
    let agent_records: Vec<u64> = (0..n).map(|_| draw(&mut rng)).collect();
    Ok(TaskInstance {
        task: "hypo-reduce".into(),
        params: vec![
            ("alpha".into(), crate::fmt_f64(alpha)),
            ("m".into(), m.to_string()),
            ("n".into(), n.to_string()),
        ],
        seed,
        curator_records,
        agent_records,
        aux: Vec::new(),
        truth: GroundTruth::Hypo { j, alpha },
    })
}

/// Draws fresh labeled evaluation points from the same distribution a
/// parity-threshold instance used, for measuring generalization error.
pub fn parity_thresh_eval_points(
    b: u32,
    c: u32,
    k_star: u64,
    t_star: u64,
    marginal: Marginal,
    count: usize,
    seed: u64,
) -> Vec<u64> {
    let mut rng = RngStream::for_datagen(seed, 1);
    (0..count)
        .map(|_| {
            let x = rng.random_range(0..(1u64 << c));
            let y = marginal.sample(b, &mut rng);
            let (par, thr) = pt_label(x, y, k_star, t_star);
            pt_pack(x, y, par, thr, b, c)
        })
        .collect()
}

fn fmt_hex(words: &[u64]) -> String {
    words.iter().map(|w| format!("{w:016x}")).collect::<Vec<_>>().join(" ")
}

fn parse_hex_words(s: &str, line: usize) -> Result<Vec<u64>> {
    s.split_whitespace()
        .map(|w| {
            u64::from_str_radix(w, 16)
                .map_err(|_| Error::InstanceParse { line, detail: format!("bad hex word {w}") })
        })
        .collect()
}

impl TaskInstance {
    fn header(&self) -> String {
        let params = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        format!("{},{},{}", self.task, params, self.seed)
    }

    /// Serializes the visible instance: a `task,params,seed` header, one hex
    /// record per line (curator records first, then agent records), then any
    /// auxiliary words as `aux,<hex>` lines.
    pub fn to_instance_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header());
        out.push('\n');
        for &r in self.curator_records.iter().chain(self.agent_records.iter()) {
            out.push_str(&format!("{r:016x}\n"));
        }
        for &w in &self.aux {
            out.push_str(&format!("aux,{w:016x}\n"));
        }
        out
    }

    /// Serializes the hidden-truth sidecar.
    pub fn to_truth_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header());
        out.push('\n');
        match &self.truth {
            GroundTruth::ParityThresh { k_star, t_star } => {
                out.push_str(&format!("truth,k_star,{k_star:016x}\n"));
                out.push_str(&format!("truth,t_star,{t_star:016x}\n"));
            }
            GroundTruth::OneOut { r_table, s, r_s } => {
                out.push_str(&format!("truth,s,{s:016x}\n"));
                out.push_str(&format!("truth,r_s,{r_s:016x}\n"));
                out.push_str(&format!("truth,r_table,{}\n", fmt_hex(r_table)));
            }
            GroundTruth::Pcs { r, s_r } => {
                out.push_str(&format!("truth,r,{r:016x}\n"));
                out.push_str(&format!("truth,s_r,{:016x}\n", *s_r as u64));
            }
            GroundTruth::Select { mu } => {
                let bits: Vec<u64> = mu.iter().map(|v| v.to_bits()).collect();
                out.push_str(&format!("truth,mu,{}\n", fmt_hex(&bits)));
            }
            GroundTruth::Hypo { j, alpha } => {
                out.push_str(&format!("truth,j,{:016x}\n", *j as u64));
                out.push_str(&format!("truth,alpha,{:016x}\n", alpha.to_bits()));
            }
        }
        out
    }

    /// Writes the instance to `path` and the truth sidecar to
    /// `path` + ".truth".
    pub fn write_files(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_instance_string())?;
        std::fs::write(truth_path(path), self.to_truth_string())?;
        Ok(())
    }

    /// Parses the pair of files written by [`TaskInstance::write_files`].
    pub fn read_files(path: &std::path::Path) -> Result<TaskInstance> {
        let main = std::fs::read_to_string(path)?;
        let truth = std::fs::read_to_string(truth_path(path))?;
        Self::from_strings(&main, &truth)
    }

    pub fn from_strings(main: &str, truth_text: &str) -> Result<TaskInstance> {
        let mut lines = main.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(Error::InstanceParse { line: 1, detail: "missing header".into() })?;
        let (task, params, seed) = parse_header(header)?;
        let m: usize = params
            .iter()
            .find(|(k, _)| k == "m")
            .and_then(|(_, v)| v.parse().ok())
            .ok_or(Error::InstanceParse { line: 1, detail: "header lacks m".into() })?;
        let mut records = Vec::new();
        let mut aux = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("aux,") {
                aux.extend(parse_hex_words(rest, i + 1)?);
            } else {
                records.extend(parse_hex_words(line, i + 1)?);
            }
        }
        if records.len() < m {
            return Err(Error::InstanceParse {
                line: 1,
                detail: format!("expected at least {m} records, got {}", records.len()),
            });
        }
        let agent_records = records.split_off(m);
        let truth = parse_truth(&task, truth_text)?;
        Ok(TaskInstance { task, params, seed, curator_records: records, agent_records, aux, truth })
    }
}

pub fn truth_path(path: &std::path::Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".truth");
    std::path::PathBuf::from(p)
}

type ParsedHeader = (String, Vec<(String, String)>, u64);

fn parse_header(header: &str) -> Result<ParsedHeader> {
    let bad = |d: &str| Error::InstanceParse { line: 1, detail: d.to_string() };
    let mut fields = header.splitn(3, ',');
    let task = fields.next().ok_or_else(|| bad("missing task"))?.to_string();
    let params_str = fields.next().ok_or_else(|| bad("missing params"))?;
    let seed: u64 = fields
        .next()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| bad("missing or invalid seed"))?;
    let mut params = Vec::new();
    for kv in params_str.split(';').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad("malformed param"))?;
        params.push((k.to_string(), v.to_string()));
    }
    Ok((task, params, seed))
}

fn parse_truth(task: &str, text: &str) -> Result<GroundTruth> {
    let mut fields: Vec<(String, Vec<u64>)> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let rest = line.strip_prefix("truth,").ok_or(Error::InstanceParse {
            line: i + 1,
            detail: "expected truth line".into(),
        })?;
        let (name, hex) = rest.split_once(',').ok_or(Error::InstanceParse {
            line: i + 1,
            detail: "malformed truth line".into(),
        })?;
        fields.push((name.to_string(), parse_hex_words(hex, i + 1)?));
    }
    let get = |name: &str| -> Result<Vec<u64>> {
        fields
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.clone())
            .ok_or(Error::InstanceParse { line: 1, detail: format!("missing truth field {name}") })
    };
    let one = |name: &str| -> Result<u64> { Ok(get(name)?[0]) };
    Ok(match task {
        "parity-thresh" | "concat" => {
            GroundTruth::ParityThresh { k_star: one("k_star")?, t_star: one("t_star")? }
        }
        "one-out" => GroundTruth::OneOut { r_table: get("r_table")?, s: one("s")?, r_s: one("r_s")? },
        "pcs" => GroundTruth::Pcs { r: one("r")?, s_r: one("s_r")? as u8 },
        "select-estimate" => GroundTruth::Select {
            mu: get("mu")?.into_iter().map(f64::from_bits).collect(),
        },
        "hypo-reduce" => {
            GroundTruth::Hypo { j: one("j")? as u8, alpha: f64::from_bits(one("alpha")?) }
        }
        other => {
            return Err(Error::InstanceParse { line: 1, detail: format!("unknown task {other}") })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(seed: u64) -> RngStream {
        RngStream::for_datagen(seed, 42)
    }

    #[test]
    fn single_share_is_the_secret() {
        let sv = xor_share(0xdead, 1, &mut stream(1)).unwrap();
        assert_eq!(sv.shares, vec![0xdead]);
    }

    #[test]
    fn share_then_reconstruct_is_identity() {
        let mut rng = stream(2);
        for _ in 0..1000 {
            let secret: u64 = rng.random();
            let parts = rng.random_range(1..=16usize);
            let sv = xor_share(secret, parts, &mut rng).unwrap();
            assert_eq!(sv.shares.len(), parts);
            assert_eq!(xor_reconstruct(&sv.shares), secret);
        }
    }

    #[test]
    fn parity_thresh_labels_recompute() {
        let inst = gen_parity_thresh(8, 4, 50, 200, 0b1011, 77, Marginal::Uniform, 3).unwrap();
        let (b, c) = (8, 4);
        for &r in inst.curator_records.iter().take(3).chain(inst.agent_records.iter().take(3)) {
            let (par, thr) = pt_label(pt_x(r, c), pt_y(r, b, c), 0b1011, 77);
            assert_eq!(pt_par(r, b, c), par);
            assert_eq!(pt_thr(r, b, c), thr);
        }
    }

    #[test]
    fn parity_thresh_zero_threshold_labels_all_one() {
        let inst = gen_parity_thresh(8, 4, 30, 30, 0, 0, Marginal::Uniform, 4).unwrap();
        for &r in inst.curator_records.iter().chain(inst.agent_records.iter()) {
            assert_eq!(pt_thr(r, 8, 4), 1);
            assert_eq!(pt_par(r, 8, 4), 0);
        }
    }

    #[test]
    fn one_out_branches_are_roughly_balanced() {
        let inst = gen_one_out(3, 8, 100, 4000, 5).unwrap();
        let share = inst.agent_records.iter().filter(|&&r| oo_is_share(r)).count();
        let frac = share as f64 / 4000.0;
        // 4 sigma of Binomial(4000, 1/2) is ~0.032.
        assert!((frac - 0.5).abs() < 0.035, "share fraction {frac}");
    }

    #[test]
    fn one_out_products_match_the_table() {
        let inst = gen_one_out(3, 8, 60, 60, 6).unwrap();
        let GroundTruth::OneOut { r_table, s, r_s } = &inst.truth else { unreachable!() };
        assert_eq!(r_table[*s as usize], *r_s);
        for &r in inst.curator_records.iter().chain(inst.agent_records.iter()) {
            if !oo_is_share(r) {
                let x = oo_x(r, 8);
                for (j, &r_j) in r_table.iter().enumerate() {
                    assert_eq!(oo_product(r, 8, j as u64), parity_of(r_j, x));
                }
            }
        }
    }

    #[test]
    fn one_out_share_records_match_the_share_vector() {
        let inst = gen_one_out(3, 8, 60, 600, 7).unwrap();
        let GroundTruth::OneOut { s, .. } = &inst.truth else { unreachable!() };
        // Reconstruct shares from records: every t must map to one value.
        let mut by_t = std::collections::BTreeMap::new();
        for &r in inst.agent_records.iter().filter(|&&r| oo_is_share(r)) {
            let prev = by_t.insert(oo_t(r), oo_share(r, 3));
            if let Some(p) = prev {
                assert_eq!(p, oo_share(r, 3), "inconsistent share for one t");
            }
        }
        if by_t.len() == 61 {
            let xor = by_t.values().fold(0u64, |a, &v| a ^ v);
            assert_eq!(xor, *s);
        }
    }

    #[test]
    fn one_out_degenerate_d_zero() {
        let inst = gen_one_out(0, 4, 20, 20, 8).unwrap();
        let GroundTruth::OneOut { r_table, s, r_s } = &inst.truth else { unreachable!() };
        assert_eq!(r_table.len(), 1);
        assert_eq!(*s, 0);
        assert_eq!(*r_s, r_table[0]);
    }

    #[test]
    fn pcs_labels_recompute_and_secret_matches_table() {
        let inst = gen_pcs(8, 40, 100, 9).unwrap();
        let GroundTruth::Pcs { r, s_r } = &inst.truth else { unreachable!() };
        for &rec in inst.curator_records.iter().take(5) {
            assert_eq!(pcs_label(rec, 8), parity_of(*r, pcs_x(rec, 8)));
            assert!(pcs_t(rec, 8) <= 40);
        }
        let xor = (0..=40u64).fold(0u8, |a, t| a ^ pcs_table_bit(&inst.aux, 8, t, *r));
        assert_eq!(xor, *s_r);
    }

    #[test]
    fn pcs_all_zero_table_gives_zero_secrets() {
        let mut inst = gen_pcs(6, 10, 20, 10).unwrap();
        inst.aux.iter_mut().for_each(|w| *w = 0);
        for j in 0..64u64 {
            let xor = (0..=10u64).fold(0u8, |a, t| a ^ pcs_table_bit(&inst.aux, 6, t, j));
            assert_eq!(xor, 0);
        }
    }

    #[test]
    fn select_all_ones_mu_gives_all_ones_records() {
        let mu = vec![1.0; 8];
        let inst = gen_select(8, &mu, 50, 50, 11).unwrap();
        for &r in inst.curator_records.iter().chain(inst.agent_records.iter()) {
            assert_eq!(r, 0xff);
        }
    }

    #[test]
    fn select_empirical_means_concentrate() {
        let mu = vec![0.5, -0.25, 0.0, 1.0];
        let inst = gen_select(4, &mu, 0, 40_000, 12).unwrap();
        let means = crate::curator::coordinate_means(&inst.agent_records, 4);
        for (j, (&m_hat, &m_true)) in means.iter().zip(mu.iter()).enumerate() {
            // 4 sigma of a +-1 coordinate mean at n = 4e4 is at most 0.02.
            assert!((m_hat - m_true).abs() < 0.025, "coord {j}: {m_hat} vs {m_true}");
        }
    }

    #[test]
    fn hypo_alpha_zero_makes_both_hypotheses_identical() {
        let a = gen_hypo(0.0, 0, 100, 100, 13).unwrap();
        let b = gen_hypo(0.0, 1, 100, 100, 13).unwrap();
        assert_eq!(a.curator_records, b.curator_records);
        assert_eq!(a.agent_records, b.agent_records);
    }

    #[test]
    fn instances_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let insts = [
            gen_parity_thresh(8, 4, 10, 20, 5, 100, Marginal::PointHeavy, 1).unwrap(),
            gen_one_out(2, 6, 12, 30, 2).unwrap(),
            gen_pcs(7, 9, 25, 3).unwrap(),
            gen_select(5, &[0.1, 0.2, -0.3, 0.0, 1.0], 6, 7, 4).unwrap(),
            gen_hypo(0.25, 1, 8, 9, 5).unwrap(),
        ];
        for (i, inst) in insts.iter().enumerate() {
            let path = dir.path().join(format!("inst{i}"));
            inst.write_files(&path).unwrap();
            let back = TaskInstance::read_files(&path).unwrap();
            assert_eq!(&back, inst);
        }
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let a = gen_one_out(3, 8, 40, 100, 99).unwrap();
        let b = gen_one_out(3, 8, 40, 100, 99).unwrap();
        assert_eq!(a, b);
        let c = gen_one_out(3, 8, 40, 100, 98).unwrap();
        assert_ne!(a.agent_records, c.agent_records);
    }
}
