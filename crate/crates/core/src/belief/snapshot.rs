use std::io::{self, Write};

use super::BeliefGrid;

/// Writes the max-over-orientation projection as an ASCII graymap. Darker
/// pixels are more likely; the first image row is the top (maximum y) row.
pub fn write_pgm<W: Write>(belief: &BeliefGrid, mut w: W) -> io::Result<()> {
    let g = belief.grid();
    let layer = g.layer_len();
    let values = belief.values();
    let mut proj = vec![0.0f64; layer];
    for (i, v) in values.iter().enumerate() {
        let c = i % layer;
        proj[c] = proj[c].max(*v);
    }
    let peak = proj.iter().fold(0.0f64, |m, &v| m.max(v));
    writeln!(w, "P2")?;
    writeln!(w, "{} {}", g.nx, g.ny)?;
    writeln!(w, "255")?;
    for iy in (0..g.ny).rev() {
        let row: Vec<String> = (0..g.nx)
            .map(|ix| {
                let v = if peak > 0.0 { proj[iy * g.nx + ix] / peak } else { 0.0 };
                (255 - (v * 255.0).round() as i64).to_string()
            })
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Writes the `k` most likely states as CSV `rank,x,y,theta,prob`, ties in
/// index order.
pub fn write_top_k_csv<W: Write>(belief: &BeliefGrid, k: usize, mut w: W) -> io::Result<()> {
    let values = belief.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    writeln!(w, "rank,x,y,theta,prob")?;
    for (rank, &i) in order.iter().take(k).enumerate() {
        let p = belief.grid().state_pose(i);
        writeln!(w, "{},{},{},{},{}", rank + 1, p.x, p.y, p.theta, values[i])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::StateGrid;

    #[test]
    fn pgm_marks_peak_black() {
        let g = StateGrid::new(3, 2, 1.0, (0.0, 0.0), 2).unwrap();
        let mut vals = vec![1.0; 12];
        vals[1] = 5.0;
        let b = BeliefGrid::from_values(g, vec![true; 6], vals).unwrap();
        let mut out = Vec::new();
        write_pgm(&b, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[..3], ["P2", "3 2", "255"]);
        assert_eq!(lines[4], "204 0 204");
    }

    #[test]
    fn top_k_orders_by_probability() {
        let g = StateGrid::new(2, 1, 1.0, (0.0, 0.0), 1).unwrap();
        let b = BeliefGrid::from_values(g, vec![true; 2], vec![0.25, 0.75]).unwrap();
        let mut out = Vec::new();
        write_top_k_csv(&b, 5, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "rank,x,y,theta,prob\n1,1.5,0.5,0,0.75\n2,0.5,0.5,0,0.25\n");
    }
}
