// Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use skd_core::network::LayerTable;

/// Mann-Whitney U statistic normalised to [0, 1]; ties count one half.
pub fn mann_whitney(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Judd AUC by pairwise counting: negatives are every non-fixated pixel.
pub fn auc_by_counting(map: &[f64], w: usize, fix: &[(u32, u32)]) -> f64 {
    let idx: Vec<usize> = fix.iter().map(|&(x, y)| y as usize * w + x as usize).collect();
    let pos: Vec<f64> = idx.iter().map(|&i| map[i]).collect();
    let neg: Vec<f64> = (0..map.len()).filter(|i| !idx.contains(i)).map(|i| map[i]).collect();
    mann_whitney(&pos, &neg)
}

/// Shuffled AUC with the whole pool as negatives (the expectation of any
/// subset draw).
pub fn sauc_exhaustive(map: &[f64], w: usize, fix: &[(u32, u32)], pool: &[(u32, u32)]) -> f64 {
    let val = |&(x, y): &(u32, u32)| map[y as usize * w + x as usize];
    let pos: Vec<f64> = fix.iter().map(val).collect();
    let neg: Vec<f64> = pool.iter().map(val).collect();
    mann_whitney(&pos, &neg)
}

pub fn nss_direct(map: &[f64], w: usize, fix: &[(u32, u32)]) -> f64 {
    let n = map.len() as f64;
    let mean = map.iter().sum::<f64>() / n;
    let std = (map.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    fix.iter()
        .map(|&(x, y)| (map[y as usize * w + x as usize] - mean) / std)
        .sum::<f64>()
        / fix.len() as f64
}

pub fn cc_direct(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn sim_direct(a: &[f64], b: &[f64]) -> f64 {
    let sa: f64 = a.iter().map(|v| v.max(0.0)).sum();
    let sb: f64 = b.iter().map(|v| v.max(0.0)).sum();
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.max(0.0) / sa).min(y.max(0.0) / sb))
        .sum()
}

/// Parameter count of the spatiotemporal model, tallied layer by layer
/// from the width table: every 3×3 or 1×1 conv has cin·cout·k² + cout,
/// every 4×4 deconv cin·cout·16 + cout.
pub fn count_spatiotemporal(t: &LayerTable) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let deconv = |cin: usize, cout: usize| cin * cout * 16 + cout;
    let stream = |first_in: usize| {
        let mut total = 0;
        let mut c = first_in;
        for &w in &t.extractor {
            total += conv(c, w, 3);
            c = w;
        }
        total
    };
    let feat = t.extractor[7];
    stream(3)
        + stream(6)
        + conv(2 * feat, t.bottleneck, 1)
        + conv(t.bottleneck, t.high_level[0], 3)
        + conv(t.high_level[0], t.high_level[1], 3)
        + deconv(t.high_level[1], t.decoder)
        + deconv(t.decoder, 1)
}
