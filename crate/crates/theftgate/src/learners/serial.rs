//! The `model.bin` (`TGM1`) container: kind, schema hash, hyperparameters,
//! trees, and the importance table. Loading verifies the stored schema hash
//! against the stored feature names, and callers that already know the
//! schema they expect can refuse a mismatched model outright.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EnsembleKind, HyperParams, LearnError, Node, Tree, TreeEnsemble};
use crate::binio;
use crate::seed::hash_names;

const MODEL_MAGIC: &[u8; 4] = b"TGM1";
const MODEL_VERSION: u32 = 1;

fn kind_byte(kind: EnsembleKind) -> u8 {
    match kind {
        EnsembleKind::SingleTree => 0,
        EnsembleKind::ExtraTrees => 1,
        EnsembleKind::RandomForest => 2,
        EnsembleKind::GradientBoosted => 3,
        EnsembleKind::IsolationForest => 4,
    }
}

fn kind_from_byte(b: u8) -> Result<EnsembleKind, std::io::Error> {
    Ok(match b {
        0 => EnsembleKind::SingleTree,
        1 => EnsembleKind::ExtraTrees,
        2 => EnsembleKind::RandomForest,
        3 => EnsembleKind::GradientBoosted,
        4 => EnsembleKind::IsolationForest,
        other => return Err(binio::invalid(&format!("bad model kind byte {other}"))),
    })
}

impl TreeEnsemble {
    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.save_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn save_to<W: Write>(&self, w: &mut W) -> Result<(), LearnError> {
        w.write_all(MODEL_MAGIC)?;
        binio::write_u32(w, MODEL_VERSION)?;
        binio::write_u8(w, kind_byte(self.kind))?;
        binio::write_u64(w, hash_names(&self.feature_names))?;
        binio::write_u32(w, self.feature_names.len() as u32)?;
        for name in &self.feature_names {
            binio::write_str(w, name)?;
        }
        binio::write_u32(w, self.classes.len() as u32)?;
        for class in &self.classes {
            binio::write_str(w, class)?;
        }
        write_hp(w, &self.hp)?;
        binio::write_u64(w, self.seed)?;
        binio::write_u32(w, self.base_score.len() as u32)?;
        for v in &self.base_score {
            binio::write_f64(w, *v)?;
        }
        binio::write_f64(w, self.iso_norm)?;
        binio::write_f64(w, self.iso_threshold)?;
        binio::write_u32(w, self.trees.len() as u32)?;
        for tree in &self.trees {
            binio::write_u32(w, tree.nodes.len() as u32)?;
            for node in &tree.nodes {
                write_node(w, node)?;
            }
        }
        for g in &self.feature_gain {
            binio::write_f64(w, *g)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TreeEnsemble, LearnError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::load_from(&mut r)
    }

    /// Loads and refuses the model when its schema hash differs from the
    /// hash of `expected_features`.
    pub fn load_expecting(
        path: &Path,
        expected_features: &[String],
    ) -> Result<TreeEnsemble, LearnError> {
        let model = Self::load(path)?;
        let expected = hash_names(expected_features);
        let stored = hash_names(&model.feature_names);
        if stored != expected {
            return Err(LearnError::SchemaHash { stored, expected });
        }
        Ok(model)
    }

    pub fn load_from<R: Read>(r: &mut R) -> Result<TreeEnsemble, LearnError> {
        binio::expect_magic(r, MODEL_MAGIC, "model")?;
        let version = binio::read_u32(r)?;
        if version != MODEL_VERSION {
            return Err(binio::invalid(&format!("unsupported model version {version}")).into());
        }
        let kind = kind_from_byte(binio::read_u8(r)?)?;
        let stored_hash = binio::read_u64(r)?;
        let n_features = binio::read_u32(r)? as usize;
        let mut feature_names = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            feature_names.push(binio::read_str(r)?);
        }
        if hash_names(&feature_names) != stored_hash {
            return Err(LearnError::SchemaHash {
                stored: stored_hash,
                expected: hash_names(&feature_names),
            });
        }
        let n_classes = binio::read_u32(r)? as usize;
        let mut classes = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            classes.push(binio::read_str(r)?);
        }
        let hp = read_hp(r)?;
        let seed = binio::read_u64(r)?;
        let n_base = binio::read_u32(r)? as usize;
        let mut base_score = Vec::with_capacity(n_base);
        for _ in 0..n_base {
            base_score.push(binio::read_f64(r)?);
        }
        let iso_norm = binio::read_f64(r)?;
        let iso_threshold = binio::read_f64(r)?;
        let n_trees = binio::read_u32(r)? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = binio::read_u32(r)? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                nodes.push(read_node(r)?);
            }
            trees.push(Tree { nodes });
        }
        let mut feature_gain = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            feature_gain.push(binio::read_f64(r)?);
        }
        Ok(TreeEnsemble {
            kind,
            feature_names,
            classes,
            trees,
            feature_gain,
            base_score,
            iso_norm,
            iso_threshold,
            hp,
            seed,
        })
    }
}

fn write_hp<W: Write>(w: &mut W, hp: &HyperParams) -> std::io::Result<()> {
    binio::write_u32(w, hp.tree_count as u32)?;
    binio::write_u32(w, hp.max_depth as u32)?;
    binio::write_u32(w, hp.min_leaf as u32)?;
    match hp.feature_subsample {
        Some(f) => {
            binio::write_u8(w, 1)?;
            binio::write_f64(w, f)?;
        }
        None => {
            binio::write_u8(w, 0)?;
            binio::write_f64(w, 0.0)?;
        }
    }
    binio::write_f64(w, hp.learning_rate)?;
    binio::write_u32(w, hp.boosting_rounds as u32)?;
    binio::write_f64(w, hp.l2_leaf)?;
    binio::write_u32(w, hp.knn_k as u32)?;
    binio::write_u32(w, hp.iso_subsample as u32)?;
    binio::write_f64(w, hp.iso_contamination)?;
    match hp.histogram_bins {
        Some(b) => {
            binio::write_u8(w, 1)?;
            binio::write_u32(w, b as u32)?;
        }
        None => {
            binio::write_u8(w, 0)?;
            binio::write_u32(w, 0)?;
        }
    }
    Ok(())
}

fn read_hp<R: Read>(r: &mut R) -> std::io::Result<HyperParams> {
    let tree_count = binio::read_u32(r)? as usize;
    let max_depth = binio::read_u32(r)? as usize;
    let min_leaf = binio::read_u32(r)? as usize;
    let has_fs = binio::read_u8(r)? == 1;
    let fs = binio::read_f64(r)?;
    let learning_rate = binio::read_f64(r)?;
    let boosting_rounds = binio::read_u32(r)? as usize;
    let l2_leaf = binio::read_f64(r)?;
    let knn_k = binio::read_u32(r)? as usize;
    let iso_subsample = binio::read_u32(r)? as usize;
    let iso_contamination = binio::read_f64(r)?;
    let has_bins = binio::read_u8(r)? == 1;
    let bins = binio::read_u32(r)? as usize;
    Ok(HyperParams {
        tree_count,
        max_depth,
        min_leaf,
        feature_subsample: has_fs.then_some(fs),
        learning_rate,
        boosting_rounds,
        l2_leaf,
        knn_k,
        iso_subsample,
        iso_contamination,
        histogram_bins: has_bins.then_some(bins),
    })
}

fn write_node<W: Write>(w: &mut W, node: &Node) -> std::io::Result<()> {
    match node {
        Node::Split {
            feature,
            threshold,
            missing_left,
            gain,
            left,
            right,
        } => {
            binio::write_u8(w, 0)?;
            binio::write_u32(w, *feature as u32)?;
            binio::write_f64(w, *threshold)?;
            binio::write_u8(w, u8::from(*missing_left))?;
            binio::write_f64(w, *gain)?;
            binio::write_u32(w, *left as u32)?;
            binio::write_u32(w, *right as u32)?;
        }
        Node::LeafDist(dist) => {
            binio::write_u8(w, 1)?;
            binio::write_u32(w, dist.len() as u32)?;
            for v in dist {
                binio::write_f64(w, *v)?;
            }
        }
        Node::LeafValue(v) => {
            binio::write_u8(w, 2)?;
            binio::write_f64(w, *v)?;
        }
        Node::LeafSize(s) => {
            binio::write_u8(w, 3)?;
            binio::write_u64(w, *s as u64)?;
        }
    }
    Ok(())
}

fn read_node<R: Read>(r: &mut R) -> std::io::Result<Node> {
    Ok(match binio::read_u8(r)? {
        0 => Node::Split {
            feature: binio::read_u32(r)? as usize,
            threshold: binio::read_f64(r)?,
            missing_left: binio::read_u8(r)? == 1,
            gain: binio::read_f64(r)?,
            left: binio::read_u32(r)? as usize,
            right: binio::read_u32(r)? as usize,
        },
        1 => {
            let len = binio::read_u32(r)? as usize;
            let mut dist = Vec::with_capacity(len);
            for _ in 0..len {
                dist.push(binio::read_f64(r)?);
            }
            Node::LeafDist(dist)
        }
        2 => Node::LeafValue(binio::read_f64(r)?),
        3 => Node::LeafSize(binio::read_u64(r)? as usize),
        other => return Err(binio::invalid(&format!("bad node tag {other}"))),
    })
}
