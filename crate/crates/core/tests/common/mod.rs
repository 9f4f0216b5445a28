#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use nvhcf::model::Widths;
use nvhcf::train::TrainConfig;

pub const USERS: usize = 60;
pub const ITEMS: usize = 90;
const WORDS: [&str; 3] = ["alpha", "bravo", "charlie"];

/// Writes `u.data`, `u.user` and `u.item` for a small three-cluster
/// catalogue: users rate most items of their own cluster highly and a few
/// others poorly. Cluster membership is visible in genre flags, title
/// words and occupation.
pub fn write_ml100k(dir: &Path) {
    let mut data = String::new();
    let mut t = 880_000_000u64;
    for u in 0..USERS {
        let g = u % 3;
        for k in 0..ITEMS {
            let i = (k * 7 + u) % ITEMS;
            let rating = if i % 3 == g {
                if (u + k) % 5 == 0 { continue } else { 5 }
            } else if (u * 3 + k) % 9 == 0 {
                2
            } else {
                continue;
            };
            t += 37;
            writeln!(data, "{}\t{}\t{rating}\t{t}", u + 1, i + 1).unwrap();
        }
    }
    std::fs::write(dir.join("u.data"), data).unwrap();

    let mut users = String::new();
    for u in 0..USERS {
        let gender = if u % 2 == 0 { "M" } else { "F" };
        writeln!(users, "{}|{}|{gender}|job{}|{}0000", u + 1, 18 + u % 40, u % 3, u % 10).unwrap();
    }
    std::fs::write(dir.join("u.user"), users).unwrap();

    let mut items = String::new();
    for i in 0..ITEMS {
        let mut flags = vec!["0"; 19];
        flags[1 + i % 3] = "1";
        writeln!(
            items,
            "{}|{} story {} (1995)|01-Jan-1995||http://example.invalid/{i}|{}",
            i + 1,
            WORDS[i % 3],
            i,
            flags.join("|")
        )
        .unwrap();
    }
    std::fs::write(dir.join("u.item"), items).unwrap();
}

/// Narrow networks so end-to-end tests finish in seconds.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        neg_ratio: 3,
        learning_rate: 3e-3,
        max_epochs: 12,
        patience: 0,
        latent_dim: 8,
        eval_samples: 16,
        val_users: 100,
        widths: Widths {
            prior_hidden: 8,
            inference_hidden: [32, 16],
            decoder_hidden: [16, 32],
        },
        ..TrainConfig::default()
    }
}
