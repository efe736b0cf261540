#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mito/dataset.hpp"
#include "mito/image.hpp"
#include "mito/nn.hpp"
#include "mito/types.hpp"

namespace mito::cls {

/// Numerically stable logistic; exact 0/1 in the saturated tails instead of
/// overflow. Rejects non-finite input.
double sigmoid(double z);

struct LogitBatch {
    std::vector<double> z;
    std::vector<double> y;  // each exactly 0 or 1
};

/// Mean binary cross-entropy over the batch, evaluated in the overflow-safe
/// form max(z,0) - z*y + log1p(exp(-|z|)). Finite for any finite logit.
double bce_with_logits(const LogitBatch& batch);

/// d loss / d z_i = (sigmoid(z_i) - y_i) / N.
std::vector<double> bce_with_logits_grad(const LogitBatch& batch);

/// Anything that can score a 224x224x3 patch with a probability. The
/// ensemble aggregates through this interface, so members can be trained
/// models or test stubs alike.
class PatchScorer {
  public:
    virtual ~PatchScorer() = default;
    virtual double score(const Image& patch224) const = 0;
};

inline constexpr int kInputSide = 224;

/// Tiny reference classifier: three stride-2 convs, concatenated global
/// average + max pooling (the max branch keeps small local evidence alive),
/// one logit. Input contract is a 224x224x3 patch normalized with the
/// per-channel stats carried in the config (and the checkpoint manifest, so
/// inference always matches training).
struct ClassifierConfig {
    int channels1 = 6;
    int channels2 = 12;
    int channels3 = 24;
    std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
    std::array<float, 3> stddev{0.25f, 0.25f, 0.25f};
    std::uint64_t seed = 1;
    std::string backbone = "tiny";  // injected-backbone profile name
};

class PatchClassifier : public PatchScorer {
  public:
    explicit PatchClassifier(const ClassifierConfig& cfg);

    /// Raw logit for a 224x224x3 patch. Throws on any other shape.
    double logit(const Image& patch224) const;
    double score(const Image& patch224) const override { return classify(patch224); }
    double classify(const Image& patch224) const;

    double logit_train(const Image& patch224);
    void backward(double dlogit);

    const ClassifierConfig& config() const { return cfg_; }
    std::vector<nn::ParamRef> params();

    void save(const std::string& dir) const;
    static PatchClassifier load(const std::string& dir);

  private:
    Tensor forward_net(const Tensor& x) const;

    ClassifierConfig cfg_;
    mutable nn::Conv2d c1_, c2_, c3_;
    mutable nn::Relu r1_, r2_, r3_;
    mutable nn::GlobalAvgPool gap_;
    mutable nn::GlobalMaxPool gmp_;
    mutable nn::Linear fc_;  // over [avg || max], 2*channels3 inputs
};

/// classify_patch per the module contract: sigmoid of the model logit.
double classify_patch(const PatchClassifier& model, const Image& patch224);

/// Probability-averaging ensemble (soft voting). Aggregation is the
/// arithmetic mean of member probabilities; logits are never averaged.
struct EnsembleSpec {
    std::vector<std::shared_ptr<const PatchScorer>> members;
};

double ensemble_predict(const EnsembleSpec& spec, const Image& patch224);

/// Ensemble manifest: {"members":[checkpoint dirs],"aggregation":"mean_prob"}.
void save_ensemble_manifest(const std::vector<std::string>& member_dirs,
                            const std::string& path);
std::vector<std::string> load_ensemble_manifest(const std::string& path);

/// Classifier prediction dump, one JSON object per line:
/// {"patch_file":str,"prob":f,"label":0|1?}
struct PatchPrediction {
    std::string patch_file;
    double prob = 0.0;
    std::optional<int> label;
};

void write_patch_predictions_jsonl(const std::vector<PatchPrediction>& preds,
                                   const std::string& path);
std::vector<PatchPrediction> read_patch_predictions_jsonl(const std::string& path);

enum class TaskProfile { RefineCls, AtypicalCls };
enum class OptimizerKind { Adam, Sgd };

/// Training recipe; profile defaults follow the published settings:
/// refine  : 100 epochs, batch 16, SGD (lr 0.01 / momentum 0.9 are local
///           defaults, not part of the published recipe)
/// atypical: 30 epochs, batch 32, Adam, lr 3e-5, cosine annealing
struct ClassifierTrainConfig {
    TaskProfile profile = TaskProfile::AtypicalCls;
    int epochs = 30;
    int batch_size = 32;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double lr = 3e-5;
    double momentum = 0.9;
    bool cosine_schedule = true;
    double positive_weight = 1.0;  // optional imbalance weighting, 1 = off
    std::uint64_t seed = 1;
    bool augment_enabled = false;
    ClassifierConfig model;

    static ClassifierTrainConfig profile_defaults(TaskProfile p);
};

struct ClassifierEpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_balanced_accuracy = 0.0;
};

struct TrainedClassifier {
    PatchClassifier model;
    std::vector<ClassifierEpochLog> log;
};

/// Patches are 50x50 crops; the trainer resizes to 224 on the fly. Requires
/// both classes in the training labels.
TrainedClassifier train_classifier(const std::vector<PatchSample>& train,
                                   const std::vector<PatchSample>& val,
                                   const ClassifierTrainConfig& cfg);

}  // namespace mito::cls
