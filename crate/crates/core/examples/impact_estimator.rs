//! Mixing penalties for placing one request on each of three instances,
//! and the shaping term a router earns for each choice.

use llm_routing::impact::{best_instance, decode_impact, heuristic_h, prompt_impact, r_mixing, ImpactConfig};

fn main() {
    let cfg = ImpactConfig::default();
    let loads: Vec<Vec<(usize, usize)>> = vec![
        vec![(900, 300), (400, 50)],
        vec![(60, 20); 6],
        vec![],
    ];
    let (p, d) = (30, 250);
    println!("incoming request: prompt {p}, expected decode {d}");
    for (i, load) in loads.iter().enumerate() {
        let pi = prompt_impact(&cfg, p, load);
        println!(
            "instance {i}: T_p {:.3} s, r_p {:+.3}, r_d {:+.4}, r_mixing {:+.4}, h {:+.4}",
            pi.t_p,
            pi.r_p,
            decode_impact(&cfg, p, d, load),
            r_mixing(&cfg, p, d, load),
            heuristic_h(&cfg, p, d, &loads, i)
        );
    }
    println!("defer: h {:+.4}", heuristic_h(&cfg, p, d, &loads, loads.len()));
    println!("best instance: {:?}", best_instance(&cfg, p, d, &loads));
}
