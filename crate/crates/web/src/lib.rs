//! Browser demo: damage a synthetic tree, reconnect it step by step and look
//! at the distance map or skeleton behind the baseline operator.
//!
//! The `Demo` methods called from JavaScript are thin wrappers over plain
//! Rust ones, so the logic is testable off-wasm.

use serde_json::json;
use wasm_bindgen::prelude::*;

use vesselfix::disconnect::{generate_pair, DisconnectionSpec};
use vesselfix::image::BinaryMask;
use vesselfix::metrics::{report, MetricsReport};
use vesselfix::morphology::{distance_transform, endpoints, skeletonize};
use vesselfix::reconnect::{EndpointBridger, Reconnector};
use vesselfix::synth::{generate_tree, TreeParams};

const BACKGROUND: [u8; 4] = [12, 14, 20, 255];
const VESSEL: [u8; 4] = [220, 220, 225, 255];
const BRIDGED: [u8; 4] = [60, 220, 90, 255];
const MISSING: [u8; 4] = [150, 40, 40, 255];
const SKELETON: [u8; 4] = [250, 210, 40, 255];
const ENDPOINT: [u8; 4] = [240, 60, 240, 255];

#[wasm_bindgen]
pub struct Demo {
    truth: BinaryMask,
    damaged: BinaryMask,
    current: BinaryMask,
    iterations: u32,
    last_diff: Option<u32>,
}

#[wasm_bindgen]
impl Demo {
    /// A fresh `size` x `size` tree; nothing damaged yet.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: u32) -> Result<Demo, JsError> {
        Self::create(seed, size).map_err(|e| JsError::new(&e))
    }

    pub fn width(&self) -> u32 {
        self.truth.dims().nx() as u32
    }

    pub fn height(&self) -> u32 {
        self.truth.dims().ny() as u32
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    /// Voxels changed by the last step, `undefined` before the first.
    #[wasm_bindgen(js_name = lastDiff)]
    pub fn last_diff(&self) -> Option<u32> {
        self.last_diff
    }

    /// Cuts the tree afresh; resets the reconnection.
    pub fn disconnect(
        &mut self,
        s: f64,
        sigma: f64,
        cuts: u32,
        artifacts: u32,
        seed: u32,
    ) -> Result<(), JsError> {
        self.damage(s, sigma, cuts, artifacts, seed)
            .map_err(|e| JsError::new(&e))
    }

    /// One application of the baseline bridger; returns the voxels it changed.
    pub fn step(&mut self, d_max: f64, angle_tol: f64) -> Result<u32, JsError> {
        self.apply_once(d_max, angle_tol)
            .map_err(|e| JsError::new(&e))
    }

    /// Steps until nothing changes or `max_iter` steps; returns the steps taken.
    pub fn converge(&mut self, d_max: f64, angle_tol: f64, max_iter: u32) -> Result<u32, JsError> {
        self.run_to_fixed_point(d_max, angle_tol, max_iter)
            .map_err(|e| JsError::new(&e))
    }

    /// RGBA pixels for `view`: `overlay`, `distance` or `skeleton`.
    pub fn render(&self, view: &str) -> Result<Vec<u8>, JsError> {
        self.pixels(view).map_err(|e| JsError::new(&e))
    }

    /// Metrics of the current mask against the intact tree, as JSON.
    pub fn stats(&self) -> String {
        self.stats_json()
    }
}

impl Demo {
    pub fn create(seed: u32, size: u32) -> Result<Demo, String> {
        let size = size as usize;
        let scale = size as f64 / 256.0;
        let params = TreeParams {
            width: size,
            height: size,
            root_radius: (4.0 * scale).max(2.0),
            length_range: (45.0 * scale, 70.0 * scale),
            seed: u64::from(seed),
            ..TreeParams::default()
        };
        let truth = generate_tree(&params).map_err(|e| e.to_string())?;
        Ok(Demo {
            damaged: truth.clone(),
            current: truth.clone(),
            truth,
            iterations: 0,
            last_diff: None,
        })
    }

    pub fn damage(
        &mut self,
        s: f64,
        sigma: f64,
        cuts: u32,
        artifacts: u32,
        seed: u32,
    ) -> Result<(), String> {
        let spec = DisconnectionSpec {
            s,
            sigma,
            n_disconnections: cuts as usize,
            n_artifacts: artifacts as usize,
            seed: u64::from(seed),
        };
        let pair = generate_pair(&self.truth, &spec).map_err(|e| e.to_string())?;
        self.damaged = pair.disconnected;
        self.current = self.damaged.clone();
        self.iterations = 0;
        self.last_diff = None;
        Ok(())
    }

    pub fn apply_once(&mut self, d_max: f64, angle_tol: f64) -> Result<u32, String> {
        let next = EndpointBridger::new(d_max, angle_tol)
            .apply(&self.current)
            .map_err(|e| e.to_string())?;
        let diff = next
            .data()
            .iter()
            .zip(self.current.data())
            .filter(|(a, b)| a != b)
            .count() as u32;
        self.current = next;
        self.iterations += 1;
        self.last_diff = Some(diff);
        Ok(diff)
    }

    pub fn run_to_fixed_point(
        &mut self,
        d_max: f64,
        angle_tol: f64,
        max_iter: u32,
    ) -> Result<u32, String> {
        for k in 1..=max_iter {
            if self.apply_once(d_max, angle_tol)? == 0 {
                return Ok(k);
            }
        }
        Ok(max_iter)
    }

    pub fn current(&self) -> &BinaryMask {
        &self.current
    }

    pub fn damaged(&self) -> &BinaryMask {
        &self.damaged
    }

    pub fn truth(&self) -> &BinaryMask {
        &self.truth
    }

    pub fn pixels(&self, view: &str) -> Result<Vec<u8>, String> {
        let n = self.current.len();
        let mut out = Vec::with_capacity(4 * n);
        match view {
            "overlay" => {
                for i in 0..n {
                    let px = match (
                        self.current.get_index(i),
                        self.damaged.get_index(i),
                        self.truth.get_index(i),
                    ) {
                        (true, true, _) => VESSEL,
                        (true, false, _) => BRIDGED,
                        (false, _, true) => MISSING,
                        (false, _, false) => BACKGROUND,
                    };
                    out.extend_from_slice(&px);
                }
            }
            "distance" => {
                if !self.current.has_background() {
                    return Err("mask has no background".into());
                }
                let dist = distance_transform(&self.current).map_err(|e| e.to_string())?;
                let max = dist.max().max(1e-9);
                for i in 0..n {
                    let v = (255.0 * (dist.get_index(i) / max).sqrt()).round() as u8;
                    out.extend_from_slice(&[v / 3, v / 2 + v / 3, v, 255]);
                }
            }
            "skeleton" => {
                let skeleton = skeletonize(&self.current);
                let mut tips = vec![false; n];
                for c in endpoints(&skeleton) {
                    tips[self.current.dims().index(c)] = true;
                }
                for (i, &tip) in tips.iter().enumerate() {
                    let px = if tip {
                        ENDPOINT
                    } else if skeleton.get_index(i) {
                        SKELETON
                    } else if self.current.get_index(i) {
                        [70, 70, 80, 255]
                    } else {
                        BACKGROUND
                    };
                    out.extend_from_slice(&px);
                }
            }
            other => return Err(format!("unknown view {other:?}")),
        }
        Ok(out)
    }

    pub fn stats_json(&self) -> String {
        match report(&self.current, &self.truth, None) {
            Ok(r) => stats_object(&r, self.iterations, self.last_diff),
            Err(e) => json!({ "error": e.to_string() }).to_string(),
        }
    }
}

fn stats_object(r: &MetricsReport, iterations: u32, last_diff: Option<u32>) -> String {
    json!({
        "dsc": r.dsc,
        "assd": r.assd,
        "beta0": r.beta0,
        "beta0_gt": r.beta0_gt,
        "eps_beta0": r.eps_beta0,
        "iterations": iterations,
        "last_diff": last_diff,
    })
    .to_string()
}
