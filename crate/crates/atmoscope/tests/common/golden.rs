//! Golden REST cases shared by the api tests and the acceptance run.

use std::fs;
use std::path::{Path, PathBuf};

use atmoscope::bench::{http_get, http_post, LocalCluster};
use atmoscope::store::{Catalog, CatalogMode};
use atmoscope_core::synth::{generate_synthetic, OrbitModel};
use regex::Regex;

use super::{day, exp};

/// Three days of two small instruments.
pub fn golden_corpus(root: &Path) {
    let mut cat = Catalog::open(root, CatalogMode::ReadWrite).unwrap();
    let models = [
        ("mipas", OrbitModel { seed: 1, scan_interval_s: 3600.0, dropout: false, ..OrbitModel::default() }),
        ("mls", OrbitModel { seed: 2, scan_interval_s: 1800.0, inclination_deg: 98.2, ..OrbitModel::default() }),
    ];
    for (name, m) in models {
        for (d, recs) in generate_synthetic(&m, &exp(name), day(2002, 7, 1), day(2002, 7, 3)) {
            cat.publish_segment(&exp(name), d, recs, false).unwrap();
        }
    }
}

pub fn normalise(body: &str) -> String {
    let rules = [
        (r#""elapsed_ms":[-0-9.eE+]+"#, r#""elapsed_ms":0"#),
        (r#""last_heartbeat":"[^"]*""#, r#""last_heartbeat":"<time>""#),
        (r#""address":"[^"]*""#, r#""address":"<address>""#),
    ];
    let mut s = body.to_string();
    for (re, rep) in rules {
        s = Regex::new(re).unwrap().replace_all(&s, rep).into_owned();
    }
    s
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub struct Case {
    pub name: &'static str,
    pub post: Option<&'static str>,
    pub path: &'static str,
    pub status: u16,
}

const fn get(name: &'static str, path: &'static str, status: u16) -> Case {
    Case { name, post: None, path, status }
}

pub const CASES: &[Case] = &[
    get("experiments", "/api/v1/experiments", 200),
    get("days_all", "/api/v1/experiments/mipas/days", 200),
    get("days_range", "/api/v1/experiments/mls/days?from=2002-07-02&to=2002-07-09", 200),
    get("days_empty", "/api/v1/experiments/mipas/days?from=2003-01-01&to=2003-01-31", 200),
    get("days_inverted", "/api/v1/experiments/mipas/days?from=2002-07-03&to=2002-07-01", 400),
    get("records_day", "/api/v1/experiments/mipas/records?day=2002-07-02", 200),
    get("records_bbox_wrapping", "/api/v1/experiments/mls/records?day=2002-07-02&bbox=-30,60,150,-150", 200),
    get("records_empty_day", "/api/v1/experiments/mipas/records?day=2002-08-01", 200),
    get("records_bad_bbox", "/api/v1/experiments/mipas/records?day=2002-07-02&bbox=1,2,3", 400),
    get("records_missing_day", "/api/v1/experiments/mipas/records", 400),
    get("cloudtop_default", "/api/v1/experiments/mipas/cloudtop?day=2002-07-02&observable=ci&cmp=le&threshold=1.8&alt_min=0&alt_max=30", 200),
    get("cloudtop_none", "/api/v1/experiments/mipas/cloudtop?day=2002-07-02&threshold=0.1", 200),
    get("cloudtop_bad_cmp", "/api/v1/experiments/mipas/cloudtop?day=2002-07-02&cmp=weird", 400),
    get("orbit_day", "/api/v1/experiments/mls/orbit?day=2002-07-01", 200),
    get("orbit_unknown_experiment", "/api/v1/experiments/envisat/orbit?day=2002-07-01", 404),
    get("unknown_path", "/api/v1/experimentz", 404),
    get("cluster_status", "/api/v1/cluster/status", 200),
    Case {
        name: "match_two_days",
        post: Some(r#"{"exp_a":"mipas","exp_b":"mls","from":"2002-07-01","to":"2002-07-02","dt_max_s":3600,"dist_max_km":2000}"#),
        path: "/api/v1/match",
        status: 200,
    },
    Case {
        name: "match_empty",
        post: Some(r#"{"exp_a":"mipas","exp_b":"mls","from":"2003-01-01","to":"2003-01-02","dt_max_s":900,"dist_max_km":300}"#),
        path: "/api/v1/match",
        status: 200,
    },
    Case {
        name: "match_bad_tolerance",
        post: Some(r#"{"exp_a":"mipas","exp_b":"mls","from":"2002-07-01","to":"2002-07-01","dt_max_s":0,"dist_max_km":300}"#),
        path: "/api/v1/match",
        status: 400,
    },
];

pub fn fetch(c: &LocalCluster, case: &Case) -> (u16, String) {
    match case.post {
        None => {
            let (s, b, _) = http_get(&c.url(case.path)).unwrap();
            (s, b)
        }
        Some(body) => http_post(&c.url(case.path), body).unwrap(),
    }
}


/// Names of cases whose normalised response differs from its golden file.
/// With `update` set, rewrites the files instead.
pub fn check_all(c: &LocalCluster, update: bool) -> Result<(), String> {
    let mut mismatched = Vec::new();
    for case in CASES {
        let (status, body) = fetch(c, case);
        if status != case.status {
            return Err(format!("{}: status {status}, expected {}: {body}", case.name, case.status));
        }
        let got = normalise(&body) + "\n";
        let path = golden_dir().join(format!("{}.json", case.name));
        if update {
            fs::write(&path, &got).map_err(|e| e.to_string())?;
            continue;
        }
        match fs::read_to_string(&path) {
            Ok(want) if want == got => {}
            Ok(_) => mismatched.push(case.name),
            Err(_) => return Err(format!("missing {}; run with UPDATE_GOLDEN=1", path.display())),
        }
    }
    if mismatched.is_empty() {
        Ok(())
    } else {
        Err(format!("responses differ from golden files: {mismatched:?}"))
    }
}
