//! Policy checkpoints: format-versioned JSON with a content digest.
//!
//! A checkpoint captures everything needed to rebuild the object: arch
//! descriptions with flat parameter vectors, the normalizer, and typed
//! metadata. No timestamps and no environment state, so identical runs
//! write identical bytes. Artifacts that extend a base policy (residual,
//! Q net, fine-tuned actor) record the base checkpoint's digest; loading
//! verifies it when the caller supplies the base they intend to use.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::STATE_DIM;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Mlp, Net, ResMlp};
use crate::policy::{BasePolicy, ChunkSpec, DiffusionPolicy, MlpPolicy, NoiseSchedule, Normalizer};
use crate::residual::{Critic, GaussianActor, ResidualPolicy, AUG_DIM};
use crate::rl::QNet;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Enough structure to rebuild a network around its flat parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "arch", rename_all = "kebab-case")]
pub enum ArchSpec {
    Mlp {
        layer_sizes: Vec<usize>,
        activation: Activation,
        output_activation: Activation,
    },
    ResMlp {
        input_dim: usize,
        width: usize,
        blocks: usize,
        output_dim: usize,
        activation: Activation,
        output_activation: Activation,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NetBlob {
    #[serde(flatten)]
    pub arch: ArchSpec,
    pub params: Vec<f32>,
}

impl NetBlob {
    pub fn of_mlp(net: &Mlp) -> Self {
        NetBlob {
            arch: ArchSpec::Mlp {
                layer_sizes: net.layer_sizes.clone(),
                activation: net.activation,
                output_activation: net.output_activation,
            },
            params: net.params().to_vec(),
        }
    }

    pub fn of_res_mlp(net: &ResMlp) -> Self {
        NetBlob {
            arch: ArchSpec::ResMlp {
                input_dim: net.input_dim,
                width: net.width,
                blocks: net.blocks,
                output_dim: net.output_dim,
                activation: net.activation,
                output_activation: net.output_activation,
            },
            params: net.params().to_vec(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        match &self.arch {
            ArchSpec::Mlp {
                layer_sizes,
                activation,
                output_activation,
            } => Mlp::from_params(layer_sizes, *activation, *output_activation, self.params.clone()),
            ArchSpec::ResMlp { .. } => {
                Err(Error::Dependency("checkpoint holds a residual-block net, expected plain".into()))
            }
        }
    }

    pub fn to_res_mlp(&self) -> Result<ResMlp> {
        match &self.arch {
            ArchSpec::ResMlp {
                input_dim,
                width,
                blocks,
                output_dim,
                activation,
                output_activation,
            } => ResMlp::from_params(
                *input_dim,
                *width,
                *blocks,
                *output_dim,
                *activation,
                *output_activation,
                self.params.clone(),
            ),
            ArchSpec::Mlp { .. } => {
                Err(Error::Dependency("checkpoint holds a plain net, expected residual-block".into()))
            }
        }
    }
}

/// What the checkpoint is, plus the scalars that are not network weights.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum CheckpointMeta {
    DiffusionPolicy {
        chunk: ChunkSpec,
        k_train: usize,
        k_infer: usize,
    },
    MlpPolicy {
        chunk: ChunkSpec,
    },
    Residual {
        alpha: f32,
        log_std: Vec<f32>,
        base_digest: String,
    },
    Qnet {
        n_samples: usize,
        noise_log_std: f32,
        base_digest: String,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub meta: CheckpointMeta,
    pub normalizer: Option<Normalizer>,
    pub nets: BTreeMap<String, NetBlob>,
}

impl Checkpoint {
    /// Digest of the canonical serialization. Struct fields serialize in
    /// declaration order and the net map is sorted, so this is stable.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("checkpoint serialization cannot fail");
        let mut h = Sha256::new();
        h.update(&bytes);
        format!("{:x}", h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let digest = self.digest();
        let envelope = Envelope {
            digest: digest.clone(),
            checkpoint: self.clone(),
        };
        let mut text = serde_json::to_string(&envelope)
            .map_err(|e| Error::Dependency(format!("cannot serialize checkpoint: {e}")))?;
        text.push('\n');
        fs::write(path, text)
            .map_err(|e| Error::Dependency(format!("cannot write {}: {e}", path.display())))?;
        Ok(digest)
    }

    pub fn load(path: &Path) -> Result<(Checkpoint, String)> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Dependency(format!("cannot read {}: {e}", path.display())))?;
        let envelope: Envelope = serde_json::from_str(&text)
            .map_err(|e| Error::Dependency(format!("cannot parse {}: {e}", path.display())))?;
        if envelope.checkpoint.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Dependency(format!(
                "{} has format version {}, this build reads {}",
                path.display(),
                envelope.checkpoint.format_version,
                CHECKPOINT_FORMAT_VERSION
            )));
        }
        let actual = envelope.checkpoint.digest();
        if actual != envelope.digest {
            return Err(Error::Dependency(format!(
                "{} is corrupt: digest mismatch (stored {}.., recomputed {}..)",
                path.display(),
                &envelope.digest[..12],
                &actual[..12]
            )));
        }
        Ok((envelope.checkpoint, actual))
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    digest: String,
    checkpoint: Checkpoint,
}

fn require_net<'c>(ckpt: &'c Checkpoint, name: &str, path: &Path) -> Result<&'c NetBlob> {
    ckpt.nets.get(name).ok_or_else(|| {
        Error::Dependency(format!("{} is missing the '{name}' net", path.display()))
    })
}

fn require_normalizer(ckpt: &Checkpoint, path: &Path) -> Result<Normalizer> {
    ckpt.normalizer
        .clone()
        .ok_or_else(|| Error::Dependency(format!("{} is missing the normalizer", path.display())))
}

/// Saves a behavior-cloned (or fine-tuned) base policy. Returns the digest
/// that downstream artifacts should record.
pub fn save_base_policy(path: &Path, policy: &BasePolicy) -> Result<String> {
    let ckpt = match policy {
        BasePolicy::Diffusion(p) => Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            meta: CheckpointMeta::DiffusionPolicy {
                chunk: p.chunk,
                k_train: p.schedule.k_train,
                k_infer: p.schedule.k_infer,
            },
            normalizer: Some(p.normalizer.clone()),
            nets: BTreeMap::from([("denoiser".to_string(), NetBlob::of_mlp(&p.denoiser))]),
        },
        BasePolicy::Mlp(p) => Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            meta: CheckpointMeta::MlpPolicy { chunk: p.chunk },
            normalizer: Some(p.normalizer.clone()),
            nets: BTreeMap::from([("policy".to_string(), NetBlob::of_res_mlp(&p.net))]),
        },
    };
    ckpt.save(path)
}

/// Loads a base policy and returns it with the checkpoint digest.
pub fn load_base_policy(path: &Path) -> Result<(BasePolicy, String)> {
    let (ckpt, digest) = Checkpoint::load(path)?;
    let policy = match &ckpt.meta {
        CheckpointMeta::DiffusionPolicy {
            chunk,
            k_train,
            k_infer,
        } => {
            let denoiser = require_net(&ckpt, "denoiser", path)?.to_mlp()?;
            let policy = DiffusionPolicy {
                denoiser,
                schedule: NoiseSchedule::new(*k_train, *k_infer)?,
                chunk: *chunk,
                normalizer: require_normalizer(&ckpt, path)?,
            };
            policy.check_dims()?;
            BasePolicy::Diffusion(policy)
        }
        CheckpointMeta::MlpPolicy { chunk } => {
            let policy = MlpPolicy {
                net: require_net(&ckpt, "policy", path)?.to_res_mlp()?,
                chunk: *chunk,
                normalizer: require_normalizer(&ckpt, path)?,
            };
            policy.check_dims()?;
            BasePolicy::Mlp(policy)
        }
        other => {
            return Err(Error::Dependency(format!(
                "{} is not a base policy checkpoint ({other:?})",
                path.display()
            )))
        }
    };
    Ok((policy, digest))
}

/// Saves a trained residual with its critic, bound to one base policy.
pub fn save_residual(
    path: &Path,
    residual: &ResidualPolicy,
    critic: &Critic,
    base_digest: &str,
) -> Result<String> {
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        meta: CheckpointMeta::Residual {
            alpha: residual.alpha,
            log_std: residual.actor.log_std.clone(),
            base_digest: base_digest.to_string(),
        },
        normalizer: None,
        nets: BTreeMap::from([
            ("actor-mean".to_string(), NetBlob::of_mlp(&residual.actor.mean_net)),
            ("critic".to_string(), NetBlob::of_mlp(&critic.net)),
        ]),
    };
    ckpt.save(path)
}

/// Loads a residual checkpoint. When `expect_base_digest` is given, refuses
/// a residual that was trained against a different base.
pub fn load_residual(
    path: &Path,
    expect_base_digest: Option<&str>,
) -> Result<(ResidualPolicy, Critic)> {
    let (ckpt, _) = Checkpoint::load(path)?;
    let CheckpointMeta::Residual {
        alpha,
        log_std,
        base_digest,
    } = &ckpt.meta
    else {
        return Err(Error::Dependency(format!(
            "{} is not a residual checkpoint",
            path.display()
        )));
    };
    if let Some(expect) = expect_base_digest {
        if expect != base_digest {
            return Err(Error::Dependency(format!(
                "residual {} was trained on base {}.., but the supplied base is {}..",
                path.display(),
                &base_digest[..12.min(base_digest.len())],
                &expect[..12.min(expect.len())]
            )));
        }
    }
    let mean_net = require_net(&ckpt, "actor-mean", path)?.to_mlp()?;
    if mean_net.in_dim() != AUG_DIM {
        return Err(Error::Dependency(format!(
            "residual actor expects input {}, checkpoint has {}",
            AUG_DIM,
            mean_net.in_dim()
        )));
    }
    let mut actor = GaussianActor::new(mean_net, 0.0);
    if log_std.len() != actor.log_std.len() {
        return Err(Error::Dependency("log_std length does not match the actor".into()));
    }
    actor.log_std = log_std.clone();
    let residual = ResidualPolicy {
        actor,
        alpha: *alpha,
    };
    residual.validate()?;
    let critic = Critic {
        net: require_net(&ckpt, "critic", path)?.to_mlp()?,
    };
    Ok((residual, critic))
}

/// Saves a selection Q net bound to one base policy.
pub fn save_qnet(
    path: &Path,
    q: &QNet,
    n_samples: usize,
    noise_log_std: f32,
    base_digest: &str,
) -> Result<String> {
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        meta: CheckpointMeta::Qnet {
            n_samples,
            noise_log_std,
            base_digest: base_digest.to_string(),
        },
        normalizer: None,
        nets: BTreeMap::from([("q".to_string(), NetBlob::of_mlp(&q.net))]),
    };
    ckpt.save(path)
}

/// Loads a Q net with its selection settings, verifying the base binding
/// when given.
pub fn load_qnet(
    path: &Path,
    expect_base_digest: Option<&str>,
) -> Result<(QNet, usize, f32)> {
    let (ckpt, _) = Checkpoint::load(path)?;
    let CheckpointMeta::Qnet {
        n_samples,
        noise_log_std,
        base_digest,
    } = &ckpt.meta
    else {
        return Err(Error::Dependency(format!("{} is not a Q checkpoint", path.display())));
    };
    if let Some(expect) = expect_base_digest {
        if expect != base_digest {
            return Err(Error::Dependency(format!(
                "Q net {} was trained on base {}.., but the supplied base is {}..",
                path.display(),
                &base_digest[..12.min(base_digest.len())],
                &expect[..12.min(expect.len())]
            )));
        }
    }
    let net = require_net(&ckpt, "q", path)?.to_mlp()?;
    if net.in_dim() <= STATE_DIM || net.out_dim() != 1 {
        return Err(Error::Dependency(format!(
            "Q net dims {}->{} cannot score state-chunk pairs",
            net.in_dim(),
            net.out_dim()
        )));
    }
    Ok((QNet { net }, *n_samples, *noise_log_std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ACTION_DIM;
    use crate::rng::named_rng;

    fn diffusion_policy() -> BasePolicy {
        let mut rng = named_rng(1, "ckpt-test");
        BasePolicy::Diffusion(
            DiffusionPolicy::new(
                ChunkSpec::new(4, 2).unwrap(),
                NoiseSchedule::new(50, 4).unwrap(),
                Normalizer::identity(STATE_DIM, ACTION_DIM),
                &[24, 24],
                &mut rng,
            )
            .unwrap(),
        )
    }

    fn mlp_policy() -> BasePolicy {
        let mut rng = named_rng(2, "ckpt-test");
        BasePolicy::Mlp(
            MlpPolicy::new(
                ChunkSpec::new(8, 4).unwrap(),
                Normalizer::identity(STATE_DIM, ACTION_DIM),
                16,
                2,
                &mut rng,
            )
            .unwrap(),
        )
    }

    #[test]
    fn base_policies_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (name, policy) in [("dp.json", diffusion_policy()), ("mlp.json", mlp_policy())] {
            let path = dir.path().join(name);
            let digest = save_base_policy(&path, &policy).unwrap();
            let (back, digest2) = load_base_policy(&path).unwrap();
            assert_eq!(digest, digest2);
            match (&policy, &back) {
                (BasePolicy::Diffusion(a), BasePolicy::Diffusion(b)) => {
                    assert_eq!(a.denoiser.params(), b.denoiser.params());
                    assert_eq!(a.chunk, b.chunk);
                    assert_eq!(a.schedule.k_infer, b.schedule.k_infer);
                    assert_eq!(a.normalizer, b.normalizer);
                }
                (BasePolicy::Mlp(a), BasePolicy::Mlp(b)) => {
                    assert_eq!(a.net.params(), b.net.params());
                    assert_eq!(a.chunk, b.chunk);
                }
                _ => panic!("policy kind flipped across the round trip"),
            }
        }
    }

    #[test]
    fn digests_are_stable_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        let policy = mlp_policy();
        let d1 = save_base_policy(&p1, &policy).unwrap();
        let d2 = save_base_policy(&p2, &policy).unwrap();
        assert_eq!(d1, d2, "same content must digest identically");
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());

        let other = diffusion_policy();
        let d3 = save_base_policy(&p2, &other).unwrap();
        assert_ne!(d1, d3);
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        save_base_policy(&path, &mlp_policy()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // Flip one digit inside the params payload.
        let tampered = text.replacen("0.0", "1.0", 1);
        assert_ne!(text, tampered, "fixture needs a zero to flip");
        fs::write(&path, tampered).unwrap();
        let err = load_base_policy(&path).unwrap_err();
        assert!(matches!(err, Error::Dependency(msg) if msg.contains("digest mismatch")));
    }

    #[test]
    fn residual_checkpoints_bind_to_their_base() {
        let dir = tempfile::tempdir().unwrap();
        let base_path = dir.path().join("base.json");
        let base_digest = save_base_policy(&base_path, &diffusion_policy()).unwrap();

        let mut rng = named_rng(3, "ckpt-test");
        let residual = ResidualPolicy::new(&[16, 16], 0.1, &mut rng).unwrap();
        let critic = Critic::new(AUG_DIM, &[16], &mut rng).unwrap();
        let res_path = dir.path().join("residual.json");
        save_residual(&res_path, &residual, &critic, &base_digest).unwrap();

        let (back, back_critic) = load_residual(&res_path, Some(&base_digest)).unwrap();
        assert_eq!(back.actor.mean_net.params(), residual.actor.mean_net.params());
        assert_eq!(back.actor.log_std, residual.actor.log_std);
        assert_eq!(back.alpha, residual.alpha);
        assert_eq!(back_critic.net.params(), critic.net.params());

        let err = load_residual(&res_path, Some("not-the-base")).unwrap_err();
        assert!(matches!(err, Error::Dependency(msg) if msg.contains("trained on base")));
    }

    #[test]
    fn qnet_round_trips_with_settings() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = named_rng(4, "ckpt-test");
        let q = QNet::new(20, &[16], &mut rng).unwrap();
        let path = dir.path().join("q.json");
        save_qnet(&path, &q, 20, -4.0, "basedigest").unwrap();
        let (back, n, sigma) = load_qnet(&path, Some("basedigest")).unwrap();
        assert_eq!(back.net.params(), q.net.params());
        assert_eq!(n, 20);
        assert_eq!(sigma, -4.0);
    }

    #[test]
    fn wrong_kind_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.json");
        save_base_policy(&path, &mlp_policy()).unwrap();
        assert!(load_residual(&path, None).is_err());
        assert!(load_qnet(&path, None).is_err());
    }
}
