//! CSV report assembly with exact rational arithmetic for the summary rows.

use ptb_core::eval::{MetricsReport, SceneKind};

/// Non-negative rational with exact 2-decimal rendering (round half up).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: i128,
    pub den: i128,
}

impl Ratio {
    pub fn new(num: i128, den: i128) -> Self {
        assert!(den > 0);
        let g = gcd(num.abs(), den);
        Ratio {
            num: num / g,
            den: den / g,
        }
    }

    pub fn add(self, other: Ratio) -> Ratio {
        Ratio::new(self.num * other.den + other.num * self.den, self.den * other.den)
    }

    pub fn div_int(self, k: i128) -> Ratio {
        Ratio::new(self.num, self.den * k)
    }

    /// Exact decimal string with 2 places, rounding half away from zero.
    pub fn to_2dp(self) -> String {
        let scaled = self.num * 100;
        let q = (scaled + self.den / 2).div_euclid(self.den);
        format!("{}.{:02}", q / 100, (q % 100).abs())
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

/// Success rate as an exact percentage ratio: `f_t / f_s * 100`.
pub fn rate_percent(f_t: usize, f_s: usize) -> Ratio {
    Ratio::new(f_t as i128 * 100, f_s as i128)
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

pub const EVAL_CSV_HEADER: &str = "scene,ptb,run,target,F_t,F_s,R_ptb,D_c,D_b,D_ptb";

/// Renders per-run rows plus a min/max/ave summary block per scene. `d_c`
/// columns are left empty when no clean reference accuracy is available.
pub fn eval_csv(reports: &[MetricsReport], d_c: Option<f64>) -> String {
    let mut out = String::from(EVAL_CSV_HEADER);
    out.push('\n');
    for report in reports {
        let scene = scene_name(report.scene);
        let ptb = report.ptb_enabled;
        for d in &report.per_run_details {
            let (dc_s, dptb_s) = match d_c {
                Some(dc) => (fmt2(dc), fmt2(dc - d.d_b)),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{scene},{ptb},{run},{target},{ft},{fs},{r},{dc_s},{db},{dptb_s}\n",
                run = d.run,
                target = d.target,
                ft = d.f_t,
                fs = d.f_s,
                r = rate_percent(d.f_t, d.f_s).to_2dp(),
                db = fmt2(d.d_b),
            ));
        }
        // summary block: exact rational min/max/ave of the run rates
        let rates: Vec<Ratio> = report
            .per_run_details
            .iter()
            .map(|d| rate_percent(d.f_t, d.f_s))
            .collect();
        let min = rates
            .iter()
            .copied()
            .min_by(cmp_ratio)
            .expect("at least one run");
        let max = rates
            .iter()
            .copied()
            .max_by(cmp_ratio)
            .expect("at least one run");
        let ave = rates
            .iter()
            .copied()
            .reduce(Ratio::add)
            .expect("at least one run")
            .div_int(rates.len() as i128);
        let db_ave: f64 =
            report.per_run_details.iter().map(|d| d.d_b).sum::<f64>() / rates.len() as f64;
        out.push_str(&format!("{scene},{ptb},min,,,,{},,,\n", min.to_2dp()));
        out.push_str(&format!("{scene},{ptb},max,,,,{},,,\n", max.to_2dp()));
        let (dc_s, dptb_s) = match d_c {
            Some(dc) => (fmt2(dc), fmt2(dc - db_ave)),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{scene},{ptb},ave,,,,{},{dc_s},{db},{dptb_s}\n",
            ave.to_2dp(),
            db = fmt2(db_ave),
        ));
    }
    out
}

fn cmp_ratio(a: &Ratio, b: &Ratio) -> std::cmp::Ordering {
    (a.num * b.den).cmp(&(b.num * a.den))
}

pub fn scene_name(kind: SceneKind) -> &'static str {
    kind.name()
}

pub const SWEEP_CSV_HEADER: &str = "count,ptb,scene,r_ptb_ave";

/// One sweep summary row.
pub fn sweep_row(count: usize, ptb: bool, scene: SceneKind, rates: &[(usize, usize)]) -> String {
    let ave = rates
        .iter()
        .map(|&(f_t, f_s)| rate_percent(f_t, f_s))
        .reduce(Ratio::add)
        .expect("at least one run")
        .div_int(rates.len() as i128);
    format!("{count},{ptb},{},{}\n", scene_name(scene), ave.to_2dp())
}
