//! Generate a synthetic phantom corpus with analytic ground truth.

use std::path::PathBuf;

use voxseg::error::{Error, Result};
use voxseg::phantom::{generate_corpus, CorpusParams};

use crate::config::{pick, EffectiveConfig, Globals};
use crate::io::{parse_triple, require_file};

#[derive(clap::Args, Debug)]
pub struct PhantomArgs {
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Number of volumes (config "phantom.volumes").
    #[arg(long)]
    pub volumes: Option<usize>,

    /// Grid size per axis (config "phantom.dims").
    #[arg(long, value_name = "Z,Y,X")]
    pub dims: Option<String>,

    /// Voxel spacing in mm (config "phantom.spacing").
    #[arg(long, value_name = "Z,Y,X")]
    pub spacing: Option<String>,

    /// Additive Gaussian noise sigma (config "phantom.noise").
    #[arg(long)]
    pub noise: Option<f64>,

    /// Full randomization-parameter JSON file; flags override its fields.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

/// Reject out-of-range randomization parameters, naming the field.
fn validate_params(p: &CorpusParams) -> Result<()> {
    let field = |name: &str, why: String| Error::SpecError(format!("{name}: {why}"));
    if p.dims.iter().any(|&d| d < 8) {
        return Err(field("dims", format!("{:?} must be at least 8 per axis", p.dims)));
    }
    if p.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(field("spacing", format!("{:?} must be positive", p.spacing)));
    }
    for (name, range) in [("radius_mm", p.radius_mm), ("thickness_mm", p.thickness_mm)] {
        if !(range[0] > 0.0 && range[0] <= range[1]) {
            return Err(field(name, format!("{range:?} must be an increasing positive range")));
        }
    }
    if !(p.z_half_extent[0] > 0.0 && p.z_half_extent[0] <= p.z_half_extent[1]) {
        return Err(field(
            "z_half_extent",
            format!("{:?} must be an increasing positive range", p.z_half_extent),
        ));
    }
    if p.center_jitter_mm < 0.0 {
        return Err(field("center_jitter_mm", "must be non-negative".into()));
    }
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&p.azimuth_gap) {
        return Err(field("azimuth_gap", format!("{} must lie in [0, π/2)", p.azimuth_gap)));
    }
    if !(p.noise_sigma.is_finite() && p.noise_sigma >= 0.0) {
        return Err(field("noise_sigma", "must be non-negative".into()));
    }
    if p.intensity_palette.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(field("intensity_palette", "entries must be positive".into()));
    }
    Ok(())
}

pub fn run(args: &PhantomArgs, globals: &Globals) -> Result<()> {
    let mut params = match &args.params {
        Some(path) => {
            require_file(path, "params file")?;
            serde_json::from_slice::<CorpusParams>(&std::fs::read(path)?)
                .map_err(|e| Error::SpecError(format!("params file: {e}")))?
        }
        None => CorpusParams::default(),
    };
    let volumes = pick(args.volumes, globals.file.get_usize("phantom.volumes")?, 20);
    if let Some(dims) = args.dims.clone().or(globals.file.get_str("phantom.dims")?) {
        params.dims = parse_triple(&dims, "dims")?;
    }
    if let Some(sp) = args.spacing.clone().or(globals.file.get_str("phantom.spacing")?) {
        params.spacing = parse_triple(&sp, "spacing")?;
    }
    if let Some(noise) = args.noise.or(globals.file.get_f64("phantom.noise")?) {
        params.noise_sigma = noise as f32;
    }
    validate_params(&params)?;

    let mut cfg = EffectiveConfig::default();
    globals.echo(&mut cfg);
    cfg.set("phantom.volumes", volumes as u64);
    cfg.set("phantom.dims", params.dims.map(|d| d.to_string()).join(","));
    cfg.set("phantom.spacing", params.spacing.map(|s| s.to_string()).join(","));
    cfg.set("phantom.noise", params.noise_sigma as f64);
    cfg.set("phantom.params", "params.json");
    cfg.write(&args.out)?;
    std::fs::write(
        args.out.join("params.json"),
        serde_json::to_string_pretty(&params).expect("serializable params") + "\n",
    )?;

    let manifest = generate_corpus(&args.out, volumes, &params, globals.seed)?;
    let n_train = manifest.volumes.iter().filter(|v| v.split == "train").count();
    println!(
        "wrote {} volumes ({} train / {} val) to {}",
        manifest.volumes.len(),
        n_train,
        manifest.volumes.len() - n_train,
        args.out.display()
    );
    Ok(())
}
