//! Feeds synthetic metric streams to the teacher and prints its
//! distribution for each estimator.

use codonflow::curriculum::{A2dKind, AcpKind, CurriculumConfig, LpeKind, Preset, Teacher};

fn stream(task: usize, round: usize) -> f64 {
    match task {
        0 => 0.1 * round as f64,
        // saturating task: improves quickly, then stops
        1 => 0.5 * (1.0 - 0.5f64.powi(round as i32)),
        _ => 0.2,
    }
}

fn show(name: &str, cfg: CurriculumConfig) -> codonflow::Result<()> {
    let mut teacher = Teacher::new(5, cfg)?;
    println!("{name}");
    for round in 1..=8 {
        let m: Vec<f64> = (0..5).map(|j| stream(j, round)).collect();
        teacher.observe(&m)?;
        let p: Vec<String> = teacher.p.iter().map(|v| format!("{v:.3}")).collect();
        println!("  round {round}: {}", p.join(" "));
    }
    Ok(())
}

fn main() -> codonflow::Result<()> {
    let online = CurriculumConfig {
        lpe: LpeKind::Online,
        lpe_alpha: 1.0,
        acp: AcpKind::Lp,
        a2d: A2dKind::Prop,
        a2d_eps: 0.0,
        floor_eps: 0.01,
        ..Default::default()
    };
    show("online, alpha 1", online.clone())?;
    show(
        "linreg, K 3",
        CurriculumConfig {
            lpe: LpeKind::Linreg,
            lpe_k: 3,
            ..online.clone()
        },
    )?;
    show(
        "sampling, K 3",
        CurriculumConfig {
            lpe: LpeKind::Sampling,
            lpe_k: 3,
            ..online
        },
    )?;
    for preset in [Preset::Conservative, Preset::Aggressive, Preset::Balanced] {
        show(
            &format!("{preset:?} preset"),
            CurriculumConfig::preset(preset),
        )?;
    }
    Ok(())
}
