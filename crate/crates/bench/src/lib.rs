//! Shared inputs for the pipeline benchmarks.

use synthflake::image::load_png;
use synthflake::synthesis::{MaterialEntry, SubstrateModel};
use synthflake::{
    default_data_dir, ColorSystem, MaterialLibrary, RgbImage, SpectralGrid, SynthesisConfig,
    SynthesisPlan,
};

pub struct Fixture {
    pub library: MaterialLibrary,
    pub system: ColorSystem,
    pub model: SubstrateModel,
    pub plan: SynthesisPlan,
    /// The shipped 448x448 sample micrograph.
    pub reference: RgbImage,
}

impl Fixture {
    /// Shipped data, visible grid, 180 nm oxide, four materials and 30 flakes per scene.
    pub fn load() -> synthflake::Result<Self> {
        let dir = default_data_dir();
        let grid = SpectralGrid::visible();
        let library = MaterialLibrary::open(dir.join("materials"))?;
        let system = ColorSystem::load(dir.join("color_system_srgb_d65.json"), grid)?;
        let model = SubstrateModel::from_library(&library, 180.0, grid)?;
        let materials = ["graphene", "mos2", "wse2", "hbn"]
            .map(|id| MaterialEntry {
                id: id.into(),
                weight: 1.0,
                monolayer_nm: None,
                layer_distribution: None,
            })
            .to_vec();
        let plan = SynthesisConfig::with_materials(materials).resolve(&library)?;
        let reference = load_png(dir.join("samples/sample_micrograph.png"))?;
        Ok(Fixture {
            library,
            system,
            model,
            plan,
            reference,
        })
    }
}
