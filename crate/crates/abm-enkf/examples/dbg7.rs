use abm_enkf::dataio::{load_config, load_daily_reports};
use abm_enkf::experiments::run_realdata;

fn main() {
    let cfg = load_config("configs/realdata.toml".as_ref()).unwrap();
    let dataset = load_daily_reports(
        "data/caba_sample/daily_reports.csv".as_ref(),
        "data/caba_sample/census.csv".as_ref(),
    )
    .unwrap();
    let scale = cfg.data_scale.unwrap();
    let art = run_realdata(&cfg, &dataset).unwrap();
    println!("gap days: {:?}", art.diagnostics.meta.gap_days);
    let first = dataset.days[0];
    let mut obs_deaths = std::collections::BTreeMap::new();
    let mut obs_conf = std::collections::BTreeMap::new();
    for (row, date) in dataset.days.iter().enumerate() {
        let day = (*date - first).num_days() as u32 + 1;
        obs_deaths.insert(day, (0..15).map(|l| (dataset.cumulative_deaths[row][l] / scale).round()).sum::<f64>());
        obs_conf.insert(day, (0..15).map(|l| (dataset.cumulative_confirmed[row][l] / scale).round()).sum::<f64>());
    }
    for r in &art.diagnostics.macro_rows {
        if r.location == "all" && (r.day % 15 == 1 || r.day > 145) && (r.status == "D" || r.status == "R" || r.status == "S") {
            let od = obs_deaths.get(&r.day);
            let oc = obs_conf.get(&r.day);
            println!("day {:3} {:3}: mean {:9.2} std {:7.2} | obsD {:?} obsC {:?}", r.day, r.status, r.mean, r.std, od, oc);
        }
    }
    let lam: Vec<(u32, f64)> = art.diagnostics.param_rows.iter().filter(|r| r.name == "lambda").map(|r| (r.day, r.mean)).collect();
    println!("lambda: {:?}", lam.iter().step_by(15).collect::<Vec<_>>());
    let rel: f64 = art.diagnostics.relabel_rows.iter().map(|r| r.relabels as f64).sum::<f64>() / art.diagnostics.relabel_rows.len().max(1) as f64;
    println!("mean relabels/member/day: {rel:.1}, relabel rows: {}", art.diagnostics.relabel_rows.len());
    for r in art.diagnostics.innovation_rows.iter().take(4) { println!("innov {:?}", r); }
}
