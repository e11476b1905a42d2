#pragma once

// Attention-based credit model. Each (timestep, agent) cell of an episode is
// embedded from the observation, the executed action, the agent id and the
// timestep, then refined by alternating attention over time (per agent) and
// over agents (per timestep). A score head reads each cell together with an
// embedding of the final global state and emits an unnormalized contribution
// score; an inverse-dynamics head predicts the executed action from
// consecutive state embeddings and the agent's previous latent.
//
// Training regresses the score total of an episode onto its team reward, with
// the action-prediction cross-entropy as an auxiliary term.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tar2/core/redistribution.hpp"
#include "tar2/env/environment.hpp"
#include "tar2/env/episode.hpp"
#include "tar2/nn/layers.hpp"
#include "tar2/nn/optim.hpp"
#include "tar2/rm/buffer.hpp"

namespace tar2::rm {

struct RewardModelConfig {
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t depth = 3;
  double dropout = 0.0;
  double lambda_id = 5e-2;
  double lr = 5e-4;
  double weight_decay = 0.0;
  double grad_clip = 10.0;
  std::size_t batch_size = 128;
  std::size_t update_freq = 200;
  std::size_t update_epochs = 200;
  std::size_t buffer_capacity = 5000;
  bool use_log_target = false;
  bool condition_on_outcome = true;
  bool use_inverse_dynamics = true;
  // Inverse-dynamics targets are the stored policy distributions instead of
  // the executed actions.
  bool soft_id_targets = false;
  // One shared agent embedding, making the model agent-permutation equivariant.
  bool tie_agent_embeddings = false;

  void validate() const;
};

struct LossValue {
  double total = 0.0;
  double regression = 0.0;  // mean over the batch of (target - sum c)^2
  double id = 0.0;          // mean over the batch of summed cross-entropy (before lambda)
};

struct TrainRound {
  LossValue loss;
  double grad_norm = 0.0;  // before clipping
  bool with_replacement = false;
};

class RewardModel {
 public:
  RewardModel(const RewardModelConfig& cfg, const env::EnvSpec& spec, std::uint64_t seed);
  // The optimizer keeps pointers into the model.
  RewardModel(const RewardModel&) = delete;
  RewardModel& operator=(const RewardModel&) = delete;

  const RewardModelConfig& config() const noexcept { return cfg_; }
  const env::EnvSpec& spec() const noexcept { return spec_; }

  std::vector<nn::Parameter*> parameters();
  // Parameters used only by the inverse-dynamics head.
  std::vector<nn::Parameter*> id_parameters();

  // Taped forward over a batch. Rows are ordered (episode, t, agent).
  struct Forward {
    nn::Var latents;  // [B*T*N, d]
    nn::Var z;        // [B, d]; zeros when outcome conditioning is off
    nn::Var scores;   // [B*T*N, 1], inactive cells are 0
    std::size_t batch = 0;
  };
  Forward forward(nn::Tape& tape, std::span<const env::Episode* const> batch, std::mt19937_64* dropout_rng = nullptr);
  // [B*T*N, n_actions]
  nn::Var id_logits(nn::Tape& tape, const Forward& fwd, std::span<const env::Episode* const> batch);
  // Composite objective on the tape; `out` receives the component values.
  nn::Var loss(nn::Tape& tape, std::span<const env::Episode* const> batch, LossValue* out = nullptr,
               std::mt19937_64* dropout_rng = nullptr);
  LossValue evaluate_loss(std::span<const env::Episode* const> batch);

  // Inference helpers (no gradient bookkeeping).
  nn::Tensor encode(const env::Episode& ep);  // [T*N, d]
  nn::Tensor outcome_embedding(const env::Episode& ep);  // [1, d]
  core::ScoreMatrix score(const env::Episode& ep);
  std::vector<core::ScoreMatrix> score_batch(std::span<const env::Episode* const> batch);
  std::vector<double> inverse_dynamics_logits(const env::Episode& ep, std::size_t t, std::size_t agent);
  core::RedistributedRewards shaped_rewards(const env::Episode& ep, double epsilon = core::kDefaultEpsilon);

  // One optimization round on a sampled batch.
  TrainRound train_round(const TrajectoryBuffer& buffer);
  // `update_epochs` rounds.
  std::vector<TrainRound> train(const TrajectoryBuffer& buffer);

  nn::Adam& optimizer() noexcept { return adam_; }
  std::mt19937_64& rng() noexcept { return rng_; }
  std::uint64_t rounds_trained() const noexcept { return adam_.steps(); }

 private:
  struct Block {
    nn::Linear tq, tk, tv, to;
    nn::LayerNorm tln;
    nn::Linear aq, ak, av, ao;
    nn::LayerNorm aln;
    nn::Linear f1, f2;
    nn::LayerNorm fln;
  };

  void check_episode(const env::Episode& ep) const;
  nn::Var drop(const nn::Var& x, std::mt19937_64* rng);

  RewardModelConfig cfg_;
  env::EnvSpec spec_;
  nn::Linear obs_proj_;
  nn::Embedding action_emb_, agent_emb_, pos_emb_;
  std::vector<Block> blocks_;
  nn::Linear state_proj_;
  nn::MLP outcome_;
  nn::MLP score_head_;
  nn::Parameter id_start_;
  nn::MLP id_head_;
  nn::Adam adam_;
  std::mt19937_64 rng_;
};

}  // namespace tar2::rm
