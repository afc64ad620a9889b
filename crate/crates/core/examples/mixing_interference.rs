//! A long request slowed down by late joiners: a (500, 500) request joins
//! every 50th iteration of a (1000, 1000) run. Prints the per-iteration
//! timeline as CSV on stdout.

use llm_routing::harness::{mixing_protocol, MixingProtocol};
use llm_routing::instance::InstanceConfig;
use llm_routing::latency::HardwareProfile;

fn main() -> llm_routing::error::Result<()> {
    let profile = HardwareProfile::default();
    let plain = mixing_protocol(&MixingProtocol::default(), InstanceConfig::default(), profile)?;
    let chunked = mixing_protocol(
        &MixingProtocol::default(),
        InstanceConfig {
            chunk_size: Some(256),
            ..Default::default()
        },
        profile,
    )?;
    eprintln!("solo {:.2} s, estimate {:.2} s", plain.solo_e2e_s, plain.estimate_s);
    eprintln!("with {} injections: {:.2} s", plain.injected, plain.mixed_e2e_s);
    eprintln!("same with 256-token chunked prefill: {:.2} s", chunked.mixed_e2e_s);
    println!("iteration,start_s,elapsed_s,kind,batch");
    for t in &plain.iterations {
        println!("{},{:.5},{:.5},{:?},{}", t.iteration, t.start_s, t.elapsed_s, t.kind, t.batch);
    }
    Ok(())
}
