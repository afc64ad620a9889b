use super::env::RoutingEnv;

/// Queue lengths beyond this are encoded as this value.
pub const QUEUE_CLAMP: usize = 512;
pub const HEAD_PROMPT_SCALE: f64 = 1024.0;

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Fixed-layout observation of size `6m + 3`.
///
/// Per instance: pending prompt tokens / KV capacity, three decode-bucket
/// counts / max batch size, free KV fraction, and the estimated seconds
/// until the instance frees a slot. The last three entries describe the
/// router queue: clamped length / 512, head prompt tokens / 1024 and the
/// head's predicted bucket.
pub fn encode_state(env: &RoutingEnv) -> Vec<f64> {
    let cfg = env.config();
    let mut v = Vec::with_capacity(cfg.state_dim());
    let kv = cfg.instance.kv_capacity_tokens as f64;
    let batch = cfg.instance.max_batch_size as f64;
    let edges = cfg.state_scheme.edges();
    for inst in env.instances() {
        let f = inst.snapshot(edges, edges);
        v.push(f.pending_prompt_tokens as f64 / kv);
        v.extend(f.decode_counts.iter().map(|&c| c as f64 / batch));
        v.push(round2(f.capacity));
        v.push(round2(f.earliest_completion));
    }
    let q = env.queue().len().min(QUEUE_CLAMP);
    v.push(q as f64 / QUEUE_CLAMP as f64);
    match env.head() {
        Some(h) => {
            v.push(h.prompt_tokens as f64 / HEAD_PROMPT_SCALE);
            v.push(h.predicted_bucket.unwrap_or(0) as f64);
        }
        None => v.extend([0.0, 0.0]),
    }
    v
}
