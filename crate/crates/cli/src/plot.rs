//! Gnuplot scripts written next to figure-like CSV output.

/// Lines of `y` against `x` from a long-format CSV, one curve per value of
/// the `group` column.
pub fn grouped_lines(
    csv: &str,
    output: &str,
    x: usize,
    y: usize,
    group: usize,
    xlabel: &str,
    ylabel: &str,
    logscale: &str,
) -> String {
    let mut s = String::new();
    s.push_str("# gnuplot script\n");
    s.push_str("set datafile separator ','\n");
    s.push_str("set key outside right\n");
    s.push_str(&format!("set terminal pngcairo size 900,600\nset output '{output}'\n"));
    if !logscale.is_empty() {
        s.push_str(&format!("set logscale {logscale}\n"));
    }
    s.push_str(&format!("set xlabel '{xlabel}'\nset ylabel '{ylabel}'\n"));
    s.push_str(&format!(
        "groups = system(\"tail -n +2 {csv} | cut -d, -f{group} | sort -g -u | tr '\\\\n' ' '\")\n"
    ));
    s.push_str(&format!(
        "plot for [g in groups] '{csv}' skip 1 using (strcol({group}) eq g ? ${x} : 1/0):{y} with lines title g\n"
    ));
    s
}

/// Two curves from one CSV: data points against a reference line.
pub fn overlay(csv: &str, output: &str, x: usize, y: usize, reference: usize, xlabel: &str, ylabel: &str) -> String {
    format!(
        "# gnuplot script\n\
         set datafile separator ','\n\
         set terminal pngcairo size 900,600\n\
         set output '{output}'\n\
         set logscale xy\n\
         set xlabel '{xlabel}'\n\
         set ylabel '{ylabel}'\n\
         plot '{csv}' skip 1 using {x}:{y} with points pt 7 ps 0.6 title 'integrated', \\\n\
         \x20    '{csv}' skip 1 using {x}:{reference} with lines title 'closed form'\n"
    )
}
