//! Synthetic KDD-format connection records.
//!
//! Stands in for the real 10% file in tests and demos when it is not on disk.
//! Class mix and per-class feature shapes follow the well-known traffic
//! profiles of that file (ICMP echo floods, SYN floods, sweeps, ordinary
//! HTTP/SMTP/DNS sessions) with random variation; nothing here is fitted to a
//! detector.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::dataset::{parse_kddcup, DatasetSchema, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Profile {
    Normal,
    Smurf,
    Neptune,
    Back,
    Satan,
    Ipsweep,
    Portsweep,
    Teardrop,
    Warezclient,
    Pod,
    Nmap,
}

// Approximate class shares of the 10% file.
const MIX: [(Profile, &str, f64); 11] = [
    (Profile::Smurf, "smurf", 0.5684),
    (Profile::Neptune, "neptune", 0.2170),
    (Profile::Normal, "normal", 0.1969),
    (Profile::Back, "back", 0.0045),
    (Profile::Satan, "satan", 0.0032),
    (Profile::Ipsweep, "ipsweep", 0.0025),
    (Profile::Portsweep, "portsweep", 0.0021),
    (Profile::Warezclient, "warezclient", 0.0021),
    (Profile::Teardrop, "teardrop", 0.0020),
    (Profile::Pod, "pod", 0.0005),
    (Profile::Nmap, "nmap", 0.0005),
];

const TCP_SERVICES: [&str; 8] = ["http", "smtp", "ftp_data", "ftp", "telnet", "private", "finger", "auth"];

struct Record {
    fields: Vec<String>,
}

impl Record {
    fn new(protocol: &str, service: &str, flag: &str) -> Self {
        let mut fields = vec!["0".to_string(); 41];
        fields[1] = protocol.into();
        fields[2] = service.into();
        fields[3] = flag.into();
        Record { fields }
    }

    fn set(&mut self, name: &str, v: f64) -> &mut Self {
        let i = COLUMN_NAMES.iter().position(|c| *c == name).expect("known column");
        self.fields[i] = if v.fract() == 0.0 && v.abs() < 1e15 {
            format!("{}", v as i64)
        } else {
            format!("{v:.2}")
        };
        self
    }
}

const COLUMN_NAMES: [&str; 41] = [
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
    "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
];

fn lognormal(rng: &mut ChaCha8Rng, median: f64, sigma: f64) -> f64 {
    LogNormal::new(median.ln(), sigma).expect("valid lognormal").sample(rng).round()
}

fn rate(rng: &mut ChaCha8Rng, center: f64, spread: f64) -> f64 {
    ((center + rng.gen_range(-spread..=spread)).clamp(0.0, 1.0) * 100.0).round() / 100.0
}

fn host_block(r: &mut Record, rng: &mut ChaCha8Rng, count: f64, srv: f64, same: f64) {
    r.set("dst_host_count", count)
        .set("dst_host_srv_count", srv)
        .set("dst_host_same_srv_rate", same)
        .set("dst_host_diff_srv_rate", rate(rng, 1.0 - same, 0.02).min(1.0 - same).max(0.0));
}

fn normal(rng: &mut ChaCha8Rng) -> Record {
    let roll: f64 = rng.gen();
    let mut r = if roll < 0.62 {
        let mut r = Record::new("tcp", "http", if rng.gen_bool(0.97) { "SF" } else { "REJ" });
        r.set("src_bytes", lognormal(rng, 240.0, 0.35))
            .set("dst_bytes", lognormal(rng, 2500.0, 1.2))
            .set("logged_in", 1.0);
        r
    } else if roll < 0.74 {
        let mut r = Record::new("tcp", "smtp", "SF");
        r.set("src_bytes", lognormal(rng, 1100.0, 0.6))
            .set("dst_bytes", lognormal(rng, 330.0, 0.2))
            .set("duration", rng.gen_range(0.0..3.0f64).floor())
            .set("logged_in", 1.0);
        r
    } else if roll < 0.80 {
        let mut r = Record::new("tcp", "ftp_data", "SF");
        r.set("src_bytes", lognormal(rng, 900.0, 2.0))
            .set("dst_bytes", 0.0)
            .set("logged_in", 1.0);
        r
    } else if roll < 0.95 {
        let svc = if rng.gen_bool(0.8) { "domain_u" } else { "ntp_u" };
        let mut r = Record::new("udp", svc, "SF");
        r.set("src_bytes", lognormal(rng, 44.0, 0.15))
            .set("dst_bytes", lognormal(rng, 100.0, 0.3));
        r
    } else if roll < 0.98 {
        let mut r = Record::new("icmp", if rng.gen_bool(0.5) { "eco_i" } else { "ecr_i" }, "SF");
        r.set("src_bytes", if rng.gen_bool(0.5) { 8.0 } else { 30.0 });
        r
    } else {
        let svc = *TCP_SERVICES[3..].choose(rng).expect("non-empty");
        let mut r = Record::new("tcp", svc, "SF");
        r.set("src_bytes", lognormal(rng, 120.0, 1.0))
            .set("dst_bytes", lognormal(rng, 600.0, 1.2))
            .set("duration", lognormal(rng, 5.0, 1.5))
            .set("hot", rng.gen_range(0.0..3.0f64).floor())
            .set("logged_in", 1.0);
        r
    };
    let count = rng.gen_range(1.0..25.0f64).floor();
    let srv = (count + rng.gen_range(0.0..10.0f64)).floor();
    r.set("count", count)
        .set("srv_count", srv)
        .set("same_srv_rate", 1.0)
        .set("srv_diff_host_rate", rate(rng, 0.1, 0.1))
        .set("dst_host_same_src_port_rate", rate(rng, 0.05, 0.05))
        .set("dst_host_srv_diff_host_rate", rate(rng, 0.03, 0.03));
    if r.fields[3] == "REJ" {
        r.set("rerror_rate", 1.0).set("srv_rerror_rate", 1.0).set("src_bytes", 0.0).set("dst_bytes", 0.0);
    }
    let hosts = rng.gen_range(1.0..256.0f64).floor();
    let same = rate(rng, 0.95, 0.05);
    host_block(&mut r, rng, hosts, 255.0, same);
    r
}

fn smurf(rng: &mut ChaCha8Rng) -> Record {
    let mut r = Record::new("icmp", "ecr_i", "SF");
    let count = rng.gen_range(300.0..=511.0f64).floor();
    r.set("src_bytes", if rng.gen_bool(0.8) { 1032.0 } else { 520.0 })
        .set("count", count)
        .set("srv_count", count)
        .set("same_srv_rate", 1.0)
        .set("dst_host_same_src_port_rate", 1.0);
    host_block(&mut r, rng, 255.0, 255.0, 1.0);
    r
}

fn neptune(rng: &mut ChaCha8Rng) -> Record {
    let svc = if rng.gen_bool(0.7) { "private" } else { *TCP_SERVICES.choose(rng).expect("non-empty") };
    let flag = if rng.gen_bool(0.9) { "S0" } else { "REJ" };
    let mut r = Record::new("tcp", svc, flag);
    let count = rng.gen_range(100.0..=511.0f64).floor();
    let srv = rng.gen_range(1.0..30.0f64).floor();
    let err = if flag == "S0" { ("serror_rate", "srv_serror_rate") } else { ("rerror_rate", "srv_rerror_rate") };
    r.set("count", count)
        .set("srv_count", srv)
        .set(err.0, 1.0)
        .set(err.1, 1.0)
        .set("same_srv_rate", rate(rng, 0.05, 0.04))
        .set("diff_srv_rate", rate(rng, 0.07, 0.03));
    let hsrv = rng.gen_range(1.0..30.0f64).floor();
    let same = rate(rng, 0.05, 0.04);
    host_block(&mut r, rng, 255.0, hsrv, same);
    let host_err = if flag == "S0" {
        ("dst_host_serror_rate", "dst_host_srv_serror_rate")
    } else {
        ("dst_host_rerror_rate", "dst_host_srv_rerror_rate")
    };
    r.set(host_err.0, 1.0).set(host_err.1, 1.0);
    r
}

fn back(rng: &mut ChaCha8Rng) -> Record {
    let mut r = Record::new("tcp", "http", "SF");
    r.set("src_bytes", 54540.0)
        .set("dst_bytes", lognormal(rng, 8314.0, 0.05))
        .set("hot", 2.0)
        .set("num_compromised", 1.0)
        .set("logged_in", 1.0)
        .set("count", rng.gen_range(1.0..10.0f64).floor())
        .set("srv_count", rng.gen_range(1.0..10.0f64).floor())
        .set("same_srv_rate", 1.0);
    let hosts = rng.gen_range(50.0..256.0f64).floor();
    host_block(&mut r, rng, hosts, 255.0, 1.0);
    r
}

fn satan(rng: &mut ChaCha8Rng) -> Record {
    let svc = *TCP_SERVICES.choose(rng).expect("non-empty");
    let mut r = Record::new("tcp", svc, if rng.gen_bool(0.8) { "REJ" } else { "RSTO" });
    let count = rng.gen_range(1.0..200.0f64).floor();
    r.set("count", count)
        .set("srv_count", 1.0)
        .set("rerror_rate", rate(rng, 0.9, 0.1))
        .set("srv_rerror_rate", 1.0)
        .set("same_srv_rate", rate(rng, 0.05, 0.05))
        .set("diff_srv_rate", rate(rng, 0.9, 0.1))
        .set("dst_host_rerror_rate", rate(rng, 0.9, 0.1))
        .set("dst_host_srv_rerror_rate", 1.0);
    host_block(&mut r, rng, 255.0, 1.0, 0.0);
    r
}

fn ipsweep(rng: &mut ChaCha8Rng) -> Record {
    let mut r = Record::new("icmp", "eco_i", "SF");
    r.set("src_bytes", if rng.gen_bool(0.7) { 8.0 } else { 18.0 })
        .set("count", rng.gen_range(1.0..3.0f64).floor())
        .set("srv_count", rng.gen_range(1.0..60.0f64).floor())
        .set("same_srv_rate", 1.0)
        .set("srv_diff_host_rate", 1.0)
        .set("dst_host_same_src_port_rate", 1.0)
        .set("dst_host_srv_diff_host_rate", rate(rng, 0.5, 0.3));
    let hosts = rng.gen_range(1.0..100.0f64).floor();
    let hsrv = rng.gen_range(1.0..100.0f64).floor();
    host_block(&mut r, rng, hosts, hsrv, 1.0);
    r
}

fn portsweep(rng: &mut ChaCha8Rng) -> Record {
    let flag = if rng.gen_bool(0.6) { "REJ" } else { "RSTR" };
    let mut r = Record::new("tcp", "private", flag);
    r.set("count", rng.gen_range(1.0..3.0f64).floor())
        .set("srv_count", 1.0)
        .set("rerror_rate", 1.0)
        .set("srv_rerror_rate", 1.0)
        .set("same_srv_rate", 1.0)
        .set("dst_host_same_src_port_rate", 1.0)
        .set("dst_host_rerror_rate", rate(rng, 0.9, 0.1))
        .set("dst_host_srv_rerror_rate", rate(rng, 0.9, 0.1));
    if flag == "RSTR" {
        r.set("duration", lognormal(rng, 2000.0, 1.0));
    }
    let hsrv = rng.gen_range(1.0..10.0f64).floor();
    let hosts = rng.gen_range(1.0..60.0f64).floor();
    let same = rate(rng, 0.3, 0.3);
    host_block(&mut r, rng, hosts, hsrv, same);
    r
}

fn teardrop(rng: &mut ChaCha8Rng) -> Record {
    let mut r = Record::new("udp", "private", "SF");
    let count = rng.gen_range(1.0..120.0f64).floor();
    r.set("src_bytes", 28.0)
        .set("wrong_fragment", 3.0)
        .set("count", count)
        .set("srv_count", count)
        .set("same_srv_rate", 1.0);
    let hsrv = rng.gen_range(1.0..200.0f64).floor();
    let same = rate(rng, 0.5, 0.4);
    host_block(&mut r, rng, 255.0, hsrv, same);
    r
}

fn warezclient(rng: &mut ChaCha8Rng) -> Record {
    let mut r = Record::new("tcp", if rng.gen_bool(0.7) { "ftp_data" } else { "ftp" }, "SF");
    r.set("duration", lognormal(rng, 300.0, 1.5))
        .set("src_bytes", lognormal(rng, 300000.0, 1.0))
        .set("dst_bytes", lognormal(rng, 1000.0, 1.5))
        .set("hot", rng.gen_range(0.0..28.0f64).floor())
        .set("logged_in", 1.0)
        .set("is_guest_login", if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
        .set("count", rng.gen_range(1.0..5.0f64).floor())
        .set("srv_count", rng.gen_range(1.0..5.0f64).floor())
        .set("same_srv_rate", 1.0);
    let hosts = rng.gen_range(1.0..256.0f64).floor();
    let hsrv = rng.gen_range(1.0..50.0f64).floor();
    let same = rate(rng, 0.4, 0.3);
    host_block(&mut r, rng, hosts, hsrv, same);
    r
}

fn pod(rng: &mut ChaCha8Rng) -> Record {
    let mut r = Record::new("icmp", "ecr_i", "SF");
    r.set("src_bytes", 1480.0)
        .set("wrong_fragment", 1.0)
        .set("count", rng.gen_range(1.0..5.0f64).floor())
        .set("srv_count", rng.gen_range(1.0..5.0f64).floor())
        .set("same_srv_rate", 1.0);
    let hosts = rng.gen_range(1.0..256.0f64).floor();
    host_block(&mut r, rng, hosts, 255.0, 1.0);
    r
}

fn nmap(rng: &mut ChaCha8Rng) -> Record {
    let (proto, svc, flag) = match rng.gen_range(0..3) {
        0 => ("icmp", "eco_i", "SF"),
        1 => ("tcp", "private", "SH"),
        _ => ("udp", "private", "SF"),
    };
    let mut r = Record::new(proto, svc, flag);
    r.set("src_bytes", if proto == "icmp" { 8.0 } else { 0.0 })
        .set("count", 1.0)
        .set("srv_count", rng.gen_range(1.0..20.0f64).floor())
        .set("same_srv_rate", 1.0)
        .set("srv_diff_host_rate", 1.0)
        .set("dst_host_same_src_port_rate", 1.0);
    let hosts = rng.gen_range(1.0..200.0f64).floor();
    let hsrv = rng.gen_range(1.0..50.0f64).floor();
    host_block(&mut r, rng, hosts, hsrv, 1.0);
    r
}

fn draw(profile: Profile, rng: &mut ChaCha8Rng) -> Record {
    match profile {
        Profile::Normal => normal(rng),
        Profile::Smurf => smurf(rng),
        Profile::Neptune => neptune(rng),
        Profile::Back => back(rng),
        Profile::Satan => satan(rng),
        Profile::Ipsweep => ipsweep(rng),
        Profile::Portsweep => portsweep(rng),
        Profile::Teardrop => teardrop(rng),
        Profile::Warezclient => warezclient(rng),
        Profile::Pod => pod(rng),
        Profile::Nmap => nmap(rng),
    }
}

/// `n` KDD-format lines (41 features + dotted label), one per line.
pub fn synthetic_kddcup_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = MIX.iter().map(|m| m.2).sum();
    let mut out = String::with_capacity(n * 160);
    for _ in 0..n {
        let mut u = rng.gen::<f64>() * total;
        let mut pick = MIX[MIX.len() - 1];
        for m in MIX {
            if u < m.2 {
                pick = m;
                break;
            }
            u -= m.2;
        }
        let rec = draw(pick.0, &mut rng);
        let _ = writeln!(out, "{},{}.", rec.fields.join(","), pick.1);
    }
    out
}

/// Parsed synthetic dataset under the KDD schema.
pub fn synthetic_kddcup(n: usize, seed: u64) -> Result<LabeledDataset> {
    let text = synthetic_kddcup_csv(n, seed);
    parse_kddcup(text.as_bytes(), &DatasetSchema::kddcup(), "<synthetic>")
}

/// Writes `n` synthetic rows to `path`.
pub fn write_synthetic_kddcup(path: impl AsRef<Path>, n: usize, seed: u64) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(synthetic_kddcup_csv(n, seed).as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
