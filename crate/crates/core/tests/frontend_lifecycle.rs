use std::collections::HashSet;

use featrack::synth::{shifted_crop, Texture};
use featrack::*;

const W: usize = 384;
const H: usize = 320;

/// Camera panning right over a wide mosaic at `speed` px per frame, so
/// the scene content slides left and old tracks leave through the edge.
fn panning_sequence(frames: usize, speed: i64) -> Vec<Image> {
    let canvas_w = W + frames * speed as usize + 8;
    let canvas = Texture::mosaic(11, canvas_w as f64, H as f64).render(canvas_w, H, 0.0, 0.0);
    (0..frames)
        .map(|i| shifted_crop(&canvas, W, H, (0, 0), (-(i as i64) * speed, 0)))
        .collect()
}

fn config() -> FrontendConfig {
    FrontendConfig {
        target_count: 100,
        ..Default::default()
    }
}

fn run(frames: &[Image]) -> Vec<FrameReport> {
    let mut fe = Frontend::new(config()).unwrap();
    frames.iter().map(|f| fe.process_frame(f).unwrap()).collect()
}

fn cell_of(grid: &GridConfig, x: f64, y: f64) -> (usize, usize) {
    (x.round() as usize / grid.cell_width(), y.round() as usize / grid.cell_height())
}

#[test]
fn redetection_fires_exactly_below_threshold() {
    let cfg = config();
    let threshold = cfg.redetect_threshold();
    assert_eq!(threshold, 30);
    let reports = run(&panning_sequence(100, 6));
    let mut fired = 0;
    for r in &reports {
        assert_eq!(r.redetected, r.live_before_detection < threshold, "frame {}", r.frame_index);
        if r.redetected {
            fired += 1;
            let cells: HashSet<_> = r.tracks.iter().map(|t| cell_of(&cfg.grid, t.x, t.y)).collect();
            assert_eq!(cells.len(), r.tracks.len(), "frame {}: shared cell", r.frame_index);
            // a track retired while still converged lost its cell to an older one
            for lost in r.retired.iter().filter(|t| t.status == TrackStatus::Converged) {
                let cell = cell_of(&cfg.grid, lost.x, lost.y);
                let owner = r.tracks.iter().find(|t| cell_of(&cfg.grid, t.x, t.y) == cell).unwrap();
                assert!(owner.birth_frame <= lost.birth_frame && owner.id < lost.id);
            }
        } else {
            assert_eq!(r.born, 0);
            assert_eq!(r.tracks.len(), r.live_before_detection);
        }
        assert!(r.tracks.len() <= cfg.target_count);
    }
    assert!(fired >= 3, "re-detection fired only {fired} times");
}

#[test]
fn scene_cut_triggers_immediate_redetection() {
    let a = Texture::mosaic(1, W as f64, H as f64).render(W, H, 0.0, 0.0);
    let b = Texture::mosaic(2, W as f64, H as f64).render(W, H, 0.0, 0.0);
    let mut fe = Frontend::new(config()).unwrap();
    let first = fe.process_frame(&a).unwrap();
    assert!(first.redetected && first.born > 30);
    let steady = fe.process_frame(&a).unwrap();
    assert!(!steady.redetected);
    assert_eq!(steady.tracks.len(), first.tracks.len());
    let cut = fe.process_frame(&b).unwrap();
    assert!(cut.live_before_detection < 30, "{} tracks survived the cut", cut.live_before_detection);
    assert!(cut.redetected);
    let first_ids: HashSet<_> = first.tracks.iter().map(|t| t.id).collect();
    assert!(cut.tracks.iter().filter(|t| t.birth_frame == 2).all(|t| !first_ids.contains(&t.id)));
}

#[test]
fn histories_are_deterministic_across_thread_counts() {
    let frames = panning_sequence(40, 6);
    let history = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            run(&frames)
                .into_iter()
                .map(|r| (r.redetected, r.born, r.tracks, r.retired))
                .collect::<Vec<_>>()
        })
    };
    let one = history(1);
    assert_eq!(one, history(8));
    assert_eq!(one, history(1));
}
