//! Pareto iteration data as CSV for plotting.

use std::io::Write;

use morap::morap::ParetoResult;

/// Header `iter,w_1..w_d,r_1..r_d`, one row per iteration, then `tUp` and
/// `tDown` rows with the vector under the `r_` columns.
pub fn write_pareto_csv<W: Write>(result: &ParetoResult, out: W) -> csv::Result<()> {
    let d = result.t.len();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iter".to_string()];
    header.extend((1..=d).map(|k| format!("w_{k}")));
    header.extend((1..=d).map(|k| format!("r_{k}")));
    w.write_record(&header)?;
    let fmt = |x: &f64| format!("{x:.8e}");
    for (k, it) in result.iterations.iter().enumerate() {
        let mut row = vec![(k + 1).to_string()];
        row.extend(it.w.iter().map(fmt));
        row.extend(it.r.iter().map(fmt));
        w.write_record(&row)?;
    }
    for (label, v) in [("tUp", &result.t_up), ("tDown", &result.t_down)] {
        let mut row = vec![label.to_string()];
        row.extend(std::iter::repeat(String::new()).take(d));
        row.extend(v.iter().map(fmt));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
