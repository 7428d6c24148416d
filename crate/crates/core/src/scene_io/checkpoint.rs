//! Checkpoint directory: `gaussians.ply` (all Gaussian parameters as float32
//! properties), `nets.bin` (network weights, magic `ARMG`), `meta.json`
//! (config, iteration, embeddings, actor poses, cubemap).
//!
//! Save → load → save is byte-identical.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::ply::{write_ply, PropType};
use crate::actors::{ActorModel, SkyCubemap};
use crate::encoders::{ClassEmbeddings, EmbeddingTable, FrameKey, Mlp};
use crate::error::{Error, Result};
use crate::gaussians::GaussianSet;
use crate::scene::{Aabb, SceneModel};
use crate::trainer::TrainConfig;

const MAGIC: &[u8; 4] = b"ARMG";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct MetaJson {
    version: u32,
    iteration: u64,
    config: TrainConfig,
    aabb: Aabb,
    embeddings: EmbeddingsJson,
    actors: Vec<ActorMetaJson>,
    cubemap: CubemapJson,
    class_embeddings: ClassEmbeddingsJson,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingsJson {
    dim: usize,
    keys: Vec<FrameKey>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ActorMetaJson {
    class: String,
    size: [f64; 3],
    key_times: Vec<f64>,
    key_rotations: Vec<f64>,
    key_translations: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CubemapJson {
    size: usize,
    texels: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassEmbeddingsJson {
    dim: usize,
    names: Vec<String>,
    values: Vec<f64>,
}

pub struct Checkpoint {
    pub scene: SceneModel,
    pub cfg: TrainConfig,
    pub iteration: u64,
}

fn gaussian_props(bands: usize) -> Vec<(String, PropType)> {
    let mut props: Vec<(String, PropType)> = Vec::new();
    for n in ["x", "y", "z"] {
        props.push((n.to_string(), PropType::F32));
    }
    for k in 0..4 {
        props.push((format!("rot_{k}"), PropType::F32));
    }
    for k in 0..3 {
        props.push((format!("scale_{k}"), PropType::F32));
    }
    props.push(("opacity".to_string(), PropType::F32));
    for k in 0..3 {
        props.push((format!("f_dc_{k}"), PropType::F32));
    }
    // Channel-major rest coefficients, matching common splat tooling.
    for k in 0..3 * (bands - 1) {
        props.push((format!("f_rest_{k}"), PropType::F32));
    }
    props.push(("actor_id".to_string(), PropType::I32));
    props
}

fn push_set(cols: &mut [Vec<f64>], set: &GaussianSet, actor_id: i64) {
    let bands = set.bands();
    for i in 0..set.len() {
        let mut c = 0;
        let p = set.position(i);
        for v in [p.x, p.y, p.z] {
            cols[c].push(v);
            c += 1;
        }
        for k in 0..4 {
            cols[c].push(set.rotations[4 * i + k]);
            c += 1;
        }
        for k in 0..3 {
            cols[c].push(set.log_scales[3 * i + k]);
            c += 1;
        }
        cols[c].push(set.opacity_logits[i]);
        c += 1;
        let block = set.sh_block(i);
        for k in 0..3 {
            cols[c].push(block[k]);
            c += 1;
        }
        for ch in 0..3 {
            for b in 1..bands {
                cols[c].push(block[b * 3 + ch]);
                c += 1;
            }
        }
        cols[c].push(actor_id as f64);
    }
}

/// Serialize every learnable group to `dir`.
pub fn save_checkpoint(
    dir: &Path,
    scene: &SceneModel,
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bands = scene.background.bands();
    let props = gaussian_props(bands);
    let mut cols = vec![Vec::new(); props.len()];
    push_set(&mut cols, &scene.background, -1);
    for actor in &scene.actors {
        push_set(&mut cols, &actor.gaussians, actor.id as i64);
    }
    write_ply(&dir.join("gaussians.ply"), &props, &cols)?;

    let mut nets: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    for (l, table) in scene.hash.tables.iter().enumerate() {
        nets.push((
            format!("hash.l{l}"),
            vec![scene.hash.cfg.table_size(), scene.hash.cfg.features],
            table.clone(),
        ));
    }
    let mut push_mlp = |name: &str, mlp: &Mlp| {
        let blocks = mlp.param_blocks();
        for (l, layer) in mlp.layers.iter().enumerate() {
            nets.push((
                format!("{name}.{l}.weight"),
                vec![layer.w.nrows(), layer.w.ncols()],
                blocks[2 * l].clone(),
            ));
            nets.push((
                format!("{name}.{l}.bias"),
                vec![layer.b.len()],
                blocks[2 * l + 1].clone(),
            ));
        }
    };
    push_mlp("d_local", &scene.d_local);
    push_mlp("d_global", &scene.d_global);
    push_mlp("d_actor_enc", &scene.d_actor_enc);
    push_mlp("d_deform_head", &scene.d_deform_head);
    if let Some(enc) = &scene.class_encoder {
        push_mlp("class_encoder", enc);
    }
    write_nets(&dir.join("nets.bin"), &nets)?;

    let meta = MetaJson {
        version: VERSION,
        iteration,
        config: cfg.clone(),
        aabb: scene.aabb,
        embeddings: EmbeddingsJson {
            dim: scene.embeddings.dim,
            keys: scene.embeddings.keys.clone(),
            values: scene.embeddings.values.clone(),
        },
        actors: scene
            .actors
            .iter()
            .map(|a| ActorMetaJson {
                class: a.class.clone(),
                size: [a.size.x, a.size.y, a.size.z],
                key_times: a.key_times.clone(),
                key_rotations: a.key_rotations.clone(),
                key_translations: a.key_translations.clone(),
            })
            .collect(),
        cubemap: CubemapJson {
            size: scene.sky.size,
            texels: scene.sky.texels.clone(),
        },
        class_embeddings: ClassEmbeddingsJson {
            dim: scene.class_embeddings.dim,
            names: scene.class_embeddings.names.clone(),
            values: scene.class_embeddings.values.clone(),
        },
    };
    let meta_path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

fn write_nets(path: &Path, nets: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for (name, dims, data) in nets {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        let mut expect = 1usize;
        for d in dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
            expect *= d;
        }
        assert_eq!(expect, data.len(), "net '{name}' shape mismatch");
        for v in data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_nets(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let mut raw = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut raw)
        .map_err(|e| Error::io(path, e))?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > raw.len() {
            return Err(Error::Checkpoint("nets.bin truncated".into()));
        }
        let s = &raw[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic in nets.bin".into()));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported nets.bin version {version} (expected {VERSION})"
        )));
    }
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("bad net name".into()))?;
        let ndims = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(ndims);
        let mut total = 1usize;
        for _ in 0..ndims {
            let d = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
            dims.push(d);
            total *= d;
        }
        let bytes = take(&mut off, total * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        nets.push((name, dims, data));
    }
    Ok(nets)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join("meta.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MetaJson =
        serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e.to_string()))?;
    if meta.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported meta version {}",
            meta.version
        )));
    }
    let cfg = meta.config.clone();
    let bands = crate::geometry::sh::coeff_count(cfg.model.sh_degree);

    // Gaussians, split by actor id.
    let ply = super::ply::read_ply(&dir.join("gaussians.ply"))?;
    let need = |n: &str| {
        ply.column(n)
            .ok_or_else(|| Error::Checkpoint(format!("gaussians.ply missing '{n}'")))
    };
    let xs = need("x")?;
    let ys = need("y")?;
    let zs = need("z")?;
    let rot: Vec<&[f64]> = (0..4)
        .map(|k| need(&format!("rot_{k}")))
        .collect::<Result<_>>()?;
    let scale: Vec<&[f64]> = (0..3)
        .map(|k| need(&format!("scale_{k}")))
        .collect::<Result<_>>()?;
    let opacity = need("opacity")?;
    let dc: Vec<&[f64]> = (0..3)
        .map(|k| need(&format!("f_dc_{k}")))
        .collect::<Result<_>>()?;
    let rest: Vec<&[f64]> = (0..3 * (bands - 1))
        .map(|k| need(&format!("f_rest_{k}")))
        .collect::<Result<_>>()?;
    let actor_id = need("actor_id")?;

    let mut background = GaussianSet::empty(cfg.model.sh_degree);
    let mut actor_sets: Vec<GaussianSet> = meta
        .actors
        .iter()
        .map(|_| GaussianSet::empty(cfg.model.sh_degree))
        .collect();
    let stride = background.sh_stride();
    for i in 0..ply.count {
        let mut sh = vec![0.0; stride];
        for k in 0..3 {
            sh[k] = dc[k][i];
        }
        for ch in 0..3 {
            for b in 1..bands {
                sh[b * 3 + ch] = rest[ch * (bands - 1) + (b - 1)][i];
            }
        }
        let id = actor_id[i] as i64;
        let target = if id < 0 {
            &mut background
        } else {
            actor_sets.get_mut(id as usize).ok_or_else(|| {
                Error::Checkpoint(format!("gaussian references unknown actor {id}"))
            })?
        };
        target.push(
            Vector3::new(xs[i], ys[i], zs[i]),
            Vector4::new(rot[0][i], rot[1][i], rot[2][i], rot[3][i]),
            Vector3::new(scale[0][i], scale[1][i], scale[2][i]),
            opacity[i],
            &sh,
        );
    }

    let actors: Vec<ActorModel> = meta
        .actors
        .iter()
        .zip(actor_sets)
        .enumerate()
        .map(|(id, (a, gaussians))| ActorModel {
            id: id as u32,
            class: a.class.clone(),
            size: Vector3::from(a.size),
            gaussians,
            key_times: a.key_times.clone(),
            key_rotations: a.key_rotations.clone(),
            key_translations: a.key_translations.clone(),
        })
        .collect();

    // Networks: construct with config dims, then overwrite the weights.
    let mut scene = SceneModel::new(
        cfg.model,
        meta.aabb,
        background,
        actors,
        meta.embeddings.keys.clone(),
        cfg.seed,
    )?;
    let nets = read_nets(&dir.join("nets.bin"))?;
    let mut by_name: std::collections::BTreeMap<String, (Vec<usize>, Vec<f64>)> = nets
        .into_iter()
        .map(|(n, d, v)| (n, (d, v)))
        .collect();
    for l in 0..scene.hash.cfg.levels {
        let (dims, data) = by_name
            .remove(&format!("hash.l{l}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing hash level {l}")))?;
        if dims != vec![scene.hash.cfg.table_size(), scene.hash.cfg.features] {
            return Err(Error::Checkpoint(format!("hash level {l} shape mismatch")));
        }
        scene.hash.tables[l] = data;
    }
    let mut load_mlp = |name: &str, mlp: &mut Mlp| -> Result<()> {
        let mut blocks = Vec::with_capacity(mlp.layers.len() * 2);
        for l in 0..mlp.layers.len() {
            let (dims, w) = by_name
                .remove(&format!("{name}.{l}.weight"))
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}.{l}.weight")))?;
            if dims != vec![mlp.layers[l].w.nrows(), mlp.layers[l].w.ncols()] {
                return Err(Error::Checkpoint(format!("{name}.{l}.weight shape mismatch")));
            }
            let (_, b) = by_name
                .remove(&format!("{name}.{l}.bias"))
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}.{l}.bias")))?;
            blocks.push(w);
            blocks.push(b);
        }
        mlp.set_param_blocks(&blocks)
    };
    load_mlp("d_local", &mut scene.d_local)?;
    load_mlp("d_global", &mut scene.d_global)?;
    load_mlp("d_actor_enc", &mut scene.d_actor_enc)?;
    load_mlp("d_deform_head", &mut scene.d_deform_head)?;
    if let Some(enc) = scene.class_encoder.as_mut() {
        load_mlp("class_encoder", enc)?;
    }

    scene.embeddings = EmbeddingTable {
        dim: meta.embeddings.dim,
        keys: meta.embeddings.keys,
        values: meta.embeddings.values,
    };
    scene.sky = SkyCubemap {
        size: meta.cubemap.size,
        texels: meta.cubemap.texels,
    };
    scene.class_embeddings = ClassEmbeddings {
        dim: meta.class_embeddings.dim,
        names: meta.class_embeddings.names,
        values: meta.class_embeddings.values,
    };
    Ok(Checkpoint {
        scene,
        cfg,
        iteration: meta.iteration,
    })
}
