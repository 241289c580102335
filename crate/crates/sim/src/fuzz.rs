//! Random concurrent scenarios for fuzzing the client, network and server together.

use blocks_core::Millis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::scenario::{
    BotSetup, CollabMode, NetworkSetup, Scenario, Timing, WorldMode, WorldSetup, SCENARIO_VERSION,
};

/// Four bots with overlapping sessions on a lossy network with forced
/// reconnects. Everyone's last session runs to the end, so all four are
/// compared with the server once the run settles. Two of them build in the same small patch so their adds
/// collide; the others complete the table, vandalize or build elsewhere.
pub fn concurrent_schedule(seed: u64, drop: f64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration: Millis = rng.random_range(30_000..90_000);
    let patch = json!({"count": 40, "region": [0, 0, 6], "undo_rate": 0.1, "delete_rate": 0.1});
    let roles = [
        ("FreeBuild", patch.clone()),
        ("FreeBuild", patch),
        match rng.random_range(0..3) {
            0 => ("BuildTable", json!(null)),
            1 => ("Vandal", json!({"budget": rng.random_range(1..6)})),
            _ => ("FreeBuild", json!({"count": 20, "region": [-20, -20, 12], "undo_rate": 0.2})),
        },
        match rng.random_range(0..3) {
            0 => ("Lurker", json!(null)),
            1 => ("Vandal", json!({"budget": rng.random_range(1..6)})),
            _ => ("BuildTower", json!({"height": rng.random_range(1..12), "column": [30, -30]})),
        },
    ];
    let bots = roles
        .into_iter()
        .enumerate()
        .map(|(i, (behavior, params))| {
            let first_join = rng.random_range(0..duration / 4);
            let sessions = if rng.random_bool(0.3) {
                let split = rng.random_range(duration / 3..duration / 2);
                vec![[first_join, split], [split + rng.random_range(1..5_000), duration]]
            } else {
                vec![[first_join, duration]]
            };
            BotSetup { name: format!("bot{i}"), user: None, behavior: behavior.into(), params, sessions }
        })
        .collect();
    let dependent = rng.random_bool(0.3);
    Scenario {
        version: SCENARIO_VERSION,
        name: format!("fuzz-{seed}"),
        seed,
        duration_ms: duration,
        start_at: 1_700_000_000_000,
        mode: CollabMode::ColocatedSync,
        world: WorldSetup {
            id: "ourworld".into(),
            mode: if dependent { WorldMode::Dependent } else { WorldMode::Independent },
            marker: dependent.then(|| "poster-1".into()),
            seed_starter: rng.random_bool(0.5),
            freshness_window_ms: 120_000,
        },
        network: NetworkSetup {
            latency_ms: rng.random_range(0..80),
            jitter_ms: rng.random_range(0..60),
            drop,
            reconnects: rng.random_range(1..=2),
        },
        timing: Timing {
            think_ms: rng.random_range(300..1_500),
            keepalive_ms: 3_000,
            reconnect_delay_ms: 500,
            wake_ms: 100,
            ..Timing::default()
        },
        sync_window_ms: blocks_analytics::DEFAULT_SYNC_WINDOW_MS,
        bots,
        expect: Default::default(),
    }
}
