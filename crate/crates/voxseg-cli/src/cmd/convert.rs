//! Convert volumes between NIfTI and raw+sidecar, optionally standardizing
//! the field of view.

use std::path::PathBuf;

use voxseg::error::Result;
use voxseg::fov::standardize_fov;
use voxseg::volume::VolumeBundle;

use crate::config::Globals;
use crate::io::{class_names_for, parse_triple, read_volume, write_volume};

#[derive(clap::Args, Debug)]
pub struct ConvertArgs {
    /// Input volume (.nii, or .raw with a JSON sidecar beside it).
    #[arg(long)]
    pub input: PathBuf,

    /// Output volume; the extension picks the format.
    #[arg(long)]
    pub output: PathBuf,

    /// Treat the volume as integer labels (nearest-neighbour resampling).
    #[arg(long)]
    pub mask: bool,

    /// Standardize to this physical field of view in mm.
    #[arg(long, value_name = "Z,Y,X", requires = "dims")]
    pub fov: Option<String>,

    /// Grid size after field-of-view standardization.
    #[arg(long, value_name = "Z,Y,X", requires = "fov")]
    pub dims: Option<String>,
}

pub fn run(args: &ConvertArgs, _globals: &Globals) -> Result<()> {
    let vol = read_volume(&args.input)?;
    let vol = match (&args.fov, &args.dims) {
        (Some(fov), Some(dims)) => {
            let fov = parse_triple::<f64>(fov, "fov")?;
            let dims = parse_triple::<usize>(dims, "dims")?;
            if args.mask {
                let max = vol.data.iter().fold(0.0f32, |m, &v| m.max(v)) as usize;
                let mask = vol.to_label_mask(class_names_for((max + 1).max(2)))?;
                let bundle = VolumeBundle::new(mask.to_volume()).with_mask(mask)?;
                let out = standardize_fov(&bundle, fov, dims)?;
                out.mask.expect("mask preserved").to_volume()
            } else {
                let bundle = VolumeBundle::new(vol);
                standardize_fov(&bundle, fov, dims)?.image
            }
        }
        _ => vol,
    };
    write_volume(&vol, &args.output)?;
    println!(
        "wrote {} ({}x{}x{} voxels)",
        args.output.display(),
        vol.dims()[0],
        vol.dims()[1],
        vol.dims()[2]
    );
    Ok(())
}
