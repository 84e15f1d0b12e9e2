//! `graph dump`: Graphviz listing of a checkpointed network.

use autoint::gradnet::derive;
use autoint::graph::ComputeGraph;
use autoint::nets::Checkpoint;
use autoint::volrender::NvrCheckpoint;

use crate::{write, CliError, DumpArgs, NetChoice};

fn integral_network(args: &DumpArgs, text: &str) -> Result<(ComputeGraph, String), CliError> {
    if let Ok(ck) = Checkpoint::from_json(text) {
        return Ok((ck.network()?.0, "integral".into()));
    }
    let ck = NvrCheckpoint::from_json(text).map_err(|_| {
        CliError::Config(format!("{} is not a network checkpoint", args.checkpoint.display()))
    })?;
    let (net, name) = match args.net {
        NetChoice::Sigma => (&ck.sigma, "sigma"),
        NetChoice::Color => (&ck.color, "color"),
        NetChoice::Sampler => match &ck.sampler {
            Some(s) => (s, "sampler"),
            None => return Err(CliError::Config("checkpoint has no sampling network".into())),
        },
    };
    Ok((net.network()?.0, name.into()))
}

pub fn run(args: &DumpArgs) -> Result<(), CliError> {
    if !args.checkpoint.is_file() {
        return Err(CliError::MissingArtifact(args.checkpoint.clone()));
    }
    let text = std::fs::read_to_string(&args.checkpoint)?;
    let (graph, name) = integral_network(args, &text)?;
    let dot = if args.grad {
        let var = graph
            .var_slots()
            .next()
            .map(|(_, s)| s.name.clone())
            .ok_or_else(|| CliError::Config(format!("the {name} network has no integration variable")))?;
        derive(&graph, &var)?.to_dot(&format!("{name}_grad"))
    } else {
        graph.to_dot(&name)
    };
    match &args.out {
        Some(path) => write(path, dot),
        None => {
            print!("{dot}");
            Ok(())
        }
    }
}
