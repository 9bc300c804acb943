use abm_enkf::dataio::{load_config, MatchRow};
use abm_enkf::experiments::{run_twin, MethodChoice};
use std::collections::BTreeMap;

fn active_truth(rows: &[abm_enkf::dataio::MacroRow]) -> BTreeMap<u32, f64> {
    let mut m = BTreeMap::new();
    for r in rows {
        if r.location == "all" && matches!(r.status.as_str(), "E" | "I_M" | "I_S" | "H") {
            *m.entry(r.day).or_insert(0.0) += r.truth.unwrap_or(0.0);
        }
    }
    m
}

fn household(rows: &[MatchRow]) -> BTreeMap<u32, f64> {
    rows.iter()
        .filter(|r| r.metric == "household_type")
        .map(|r| (r.day, r.mean))
        .collect()
}

fn main() {
    let seeding: u32 = std::env::args().nth(1).unwrap().parse().unwrap();
    let days: usize = std::env::args().nth(2).unwrap().parse().unwrap();
    let mut base = load_config("configs/microscale.toml".as_ref()).unwrap();
    base.initial_exposed = vec![seeding];
    base.days = days;
    if let Some(floor) = std::env::args().nth(3) {
        base.observations.count_floor = floor.parse().unwrap();
    }
    let mut per: BTreeMap<&str, Vec<BTreeMap<u32, f64>>> = BTreeMap::new();
    let mut actives: Vec<BTreeMap<u32, f64>> = Vec::new();
    let mut relabels: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for k in 0..3 {
        let mut cfg = base.clone();
        cfg.truth_seed += k;
        cfg.ensemble_seed += k;
        for (label, method) in [
            ("rand", MethodChoice::Randomized),
            ("casc", MethodChoice::Cascade),
            ("ctl", MethodChoice::None),
        ] {
            let mut c = cfg.clone();
            c.method = method;
            let art = run_twin(&c).unwrap();
            if label == "rand" {
                actives.push(active_truth(&art.diagnostics.macro_rows));
                for r in &art.diagnostics.relabel_rows {
                    relabels.entry(r.day).or_default().push(r.relabels as f64);
                }
            }
            per.entry(label).or_default().push(household(&art.diagnostics.match_rows));
        }
    }
    let med = |label: &str, day: u32| -> f64 {
        let mut v: Vec<f64> = per[label].iter().map(|m| m[&day]).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[1]
    };
    let mut worst_rand: (f64, u32) = (1.0, 0);
    let mut worst_casc: (f64, u32) = (1.0, 0);
    let mut min_after10 = 1.0f64;
    for day in 0..=days as u32 {
        let c = med("ctl", day);
        let r = med("rand", day);
        let ca = med("casc", day);
        if r - c < worst_rand.0 { worst_rand = (r - c, day); }
        if ca - c < worst_casc.0 { worst_casc = (ca - c, day); }
        if day > 10 { min_after10 = min_after10.min(r.min(ca)); }
        let act = actives[0].get(&day).cloned().unwrap_or(0.0);
        let rel = relabels.get(&day).map(|v| v.iter().sum::<f64>() / v.len() as f64).unwrap_or(0.0);
        if day % 5 == 0 || (r - c) < 0.0 || (ca - c) < 0.0 {
            println!("day {day:3}: active {act:6.0} relabels {rel:5.1} ctl {c:.5} rand {r:.5} ({:+.5}) casc {ca:.5} ({:+.5})", r - c, ca - c);
        }
    }
    println!("seeding {seeding}: worst rand delta {:+.6} @day {}, worst casc {:+.6} @day {}, min household after day10 {:.4}", worst_rand.0, worst_rand.1, worst_casc.0, worst_casc.1, min_after10);
}
