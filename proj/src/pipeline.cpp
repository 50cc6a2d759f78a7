#include "uda/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "uda/adam.hpp"
#include "uda/losses.hpp"
#include "uda/networks.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace uda {

void TrainConfig::validate() const {
    if (epochs < 1) throw ParamError("config: epochs must be >= 1");
    if (batch_size < 1) throw ParamError("config: batch_size must be >= 1");
    if (lr_seg <= 0.0 || lr_gan <= 0.0) throw ParamError("config: learning rates must be > 0");
    if (d_accuracy_min <= 0.0 || d_accuracy_min > 1.0)
        throw ParamError("config: d_accuracy_min must be in (0, 1]");
    if (g_loss_max <= 0.0) throw ParamError("config: g_loss_max must be > 0");
    if (lambda_cycle < 0.0) throw ParamError("config: lambda_cycle must be >= 0");
    if (rolling_window < 1) throw ParamError("config: rolling_window must be >= 1");
    if (gan_max_epochs < 1) throw ParamError("config: gan_max_epochs must be >= 1");
    if (seg_base_width < 1 || gen_base_width < 1 || disc_base_width < 1 || in_channels < 1)
        throw ParamError("config: network widths and channels must be >= 1");
    if (gen_dropout_p < 0.0 || gen_dropout_p >= 1.0)
        throw ParamError("config: gen_dropout_p must be in [0, 1)");
    if (threads < 1) throw ParamError("config: threads must be >= 1");
}

std::string TrainConfig::to_json() const {
    json j;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["lr_seg"] = lr_seg;
    j["lr_gan"] = lr_gan;
    j["seed"] = seed;
    j["lambda_cycle"] = lambda_cycle;
    j["d_accuracy_min"] = d_accuracy_min;
    j["g_loss_max"] = g_loss_max;
    j["rolling_window"] = rolling_window;
    j["gan_max_epochs"] = gan_max_epochs;
    j["d_accuracy_on_heldout"] = d_accuracy_on_heldout;
    j["eval_every"] = eval_every;
    j["sample_every"] = sample_every;
    j["threads"] = threads;
    j["in_channels"] = in_channels;
    j["seg_base_width"] = seg_base_width;
    j["gen_base_width"] = gen_base_width;
    j["disc_base_width"] = disc_base_width;
    j["gen_dropout_p"] = gen_dropout_p;
    return j.dump();
}

// ---- checkpoint pack/unpack ----

namespace {

using TF = float;

void add_entry(Checkpoint& c, const std::string& name, const Tensor<TF>& t) {
    c.entries.push_back({name, t->shape, t->data});
}

void add_block(Checkpoint& c, const std::string& prefix, const ConvBlock<TF>& b) {
    add_entry(c, prefix + ".w", b.w);
    add_entry(c, prefix + ".b", b.b);
    if (b.has_norm) {
        add_entry(c, prefix + ".gamma", b.gamma);
        add_entry(c, prefix + ".beta", b.beta);
    }
}

void restore_tensor(const Checkpoint& c, const std::string& name, const Tensor<TF>& t) {
    const CheckpointEntry* e = c.find(name);
    if (!e) throw IoError("checkpoint: missing parameter '" + name + "'");
    if (e->shape != t->shape)
        throw ShapeError("checkpoint: parameter '" + name + "' has shape " + shape_str(e->shape) +
                         ", expected " + shape_str(t->shape));
    t->data = e->values;
}

void restore_block(const Checkpoint& c, const std::string& prefix, ConvBlock<TF>& b) {
    restore_tensor(c, prefix + ".w", b.w);
    restore_tensor(c, prefix + ".b", b.b);
    if (b.has_norm) {
        restore_tensor(c, prefix + ".gamma", b.gamma);
        restore_tensor(c, prefix + ".beta", b.beta);
    }
}

const char* kSegBlockNames[7] = {"enc1", "enc2", "enc3", "dec2", "merge2", "dec1", "merge1"};

Checkpoint pack_segmenter(const SegmenterParams<TF>& p, uint32_t epoch, uint64_t seed,
                          uint64_t digest) {
    Checkpoint c;
    c.kind = "segmenter";
    c.config_json = json{{"in_channels", p.cfg.in_channels},
                         {"num_classes", p.cfg.num_classes},
                         {"base_width", p.cfg.base_width}}
                        .dump();
    c.epoch = epoch;
    c.seed = seed;
    c.config_digest = digest;
    const ConvBlock<TF>* blocks[7] = {&p.enc1, &p.enc2, &p.enc3, &p.dec2, &p.merge2, &p.dec1, &p.merge1};
    for (int i = 0; i < 7; ++i) add_block(c, kSegBlockNames[i], *blocks[i]);
    add_entry(c, "head.w", p.head_w);
    add_entry(c, "head.b", p.head_b);
    return c;
}

SegmenterParams<TF> unpack_segmenter(const Checkpoint& c) {
    if (c.kind != "segmenter")
        throw IoError("checkpoint: expected kind 'segmenter', got '" + c.kind + "'");
    json j = json::parse(c.config_json);
    SegmenterConfig cfg;
    cfg.in_channels = j.at("in_channels");
    cfg.num_classes = j.at("num_classes");
    cfg.base_width = j.at("base_width");
    SegmenterParams<TF> p = init_segmenter<TF>(cfg, 0);
    ConvBlock<TF>* blocks[7] = {&p.enc1, &p.enc2, &p.enc3, &p.dec2, &p.merge2, &p.dec1, &p.merge1};
    for (int i = 0; i < 7; ++i) restore_block(c, kSegBlockNames[i], *blocks[i]);
    restore_tensor(c, "head.w", p.head_w);
    restore_tensor(c, "head.b", p.head_b);
    return p;
}

Checkpoint pack_generator(const GeneratorParams<TF>& p, uint32_t epoch, uint64_t seed,
                          uint64_t digest) {
    Checkpoint c;
    c.kind = "generator";
    c.config_json = json{{"in_channels", p.cfg.in_channels},
                         {"out_channels", p.cfg.out_channels},
                         {"base_width", p.cfg.base_width},
                         {"dropout_p", p.cfg.dropout_p}}
                        .dump();
    c.epoch = epoch;
    c.seed = seed;
    c.config_digest = digest;
    for (int i = 0; i < 4; ++i) add_block(c, "down" + std::to_string(i), p.down[static_cast<size_t>(i)]);
    for (int i = 0; i < 4; ++i) add_block(c, "up" + std::to_string(i), p.up[static_cast<size_t>(i)]);
    add_entry(c, "head.w", p.head_w);
    add_entry(c, "head.b", p.head_b);
    return c;
}

GeneratorParams<TF> unpack_generator(const Checkpoint& c) {
    if (c.kind != "generator")
        throw IoError("checkpoint: expected kind 'generator', got '" + c.kind + "'");
    json j = json::parse(c.config_json);
    GeneratorConfig cfg;
    cfg.in_channels = j.at("in_channels");
    cfg.out_channels = j.at("out_channels");
    cfg.base_width = j.at("base_width");
    cfg.dropout_p = j.at("dropout_p");
    GeneratorParams<TF> p = init_generator<TF>(cfg, 0);
    for (int i = 0; i < 4; ++i) restore_block(c, "down" + std::to_string(i), p.down[static_cast<size_t>(i)]);
    for (int i = 0; i < 4; ++i) restore_block(c, "up" + std::to_string(i), p.up[static_cast<size_t>(i)]);
    restore_tensor(c, "head.w", p.head_w);
    restore_tensor(c, "head.b", p.head_b);
    return p;
}

Checkpoint pack_discriminator(const DiscriminatorParams<TF>& p, uint32_t epoch, uint64_t seed,
                              uint64_t digest) {
    Checkpoint c;
    c.kind = "discriminator";
    c.config_json =
        json{{"in_channels", p.cfg.in_channels}, {"base_width", p.cfg.base_width}}.dump();
    c.epoch = epoch;
    c.seed = seed;
    c.config_digest = digest;
    for (int i = 0; i < 5; ++i) add_block(c, "conv" + std::to_string(i), p.blocks[static_cast<size_t>(i)]);
    add_entry(c, "head.w", p.head_w);
    add_entry(c, "head.b", p.head_b);
    return c;
}

// ---- batching helpers ----

Tensor<TF> patch_batch(const DomainDataset& ds, const std::vector<size_t>& idx) {
    const auto& first = ds.patches[idx[0]];
    int n = static_cast<int>(idx.size());
    std::vector<TF> data;
    data.reserve(static_cast<size_t>(n) * first.image.size());
    for (size_t i : idx) data.insert(data.end(), ds.patches[i].image.begin(), ds.patches[i].image.end());
    return make_tensor<TF>({n, first.channels, first.height, first.width}, std::move(data));
}

std::vector<int> patch_labels(const DomainDataset& ds, const std::vector<size_t>& idx) {
    std::vector<int> labels;
    for (size_t i : idx) {
        const auto& m = ds.patches[i].mask;
        if (!m) throw ParamError("training patch " + std::to_string(i) + " has no labels");
        labels.insert(labels.end(), m->begin(), m->end());
    }
    return labels;
}

std::vector<int> argmax_classes(const TensorNode<TF>& logits) {
    int n = logits.shape[0], c = logits.shape[1];
    size_t plane = static_cast<size_t>(logits.shape[2]) * logits.shape[3];
    std::vector<int> pred(static_cast<size_t>(n) * plane);
    for (int b = 0; b < n; ++b) {
        for (size_t pix = 0; pix < plane; ++pix) {
            size_t base = static_cast<size_t>(b) * c * plane + pix;
            int best = 0;
            TF bv = logits.data[base];
            for (int k = 1; k < c; ++k) {
                TF v = logits.data[base + static_cast<size_t>(k) * plane];
                if (v > bv) {
                    bv = v;
                    best = k;
                }
            }
            pred[static_cast<size_t>(b) * plane + pix] = best;
        }
    }
    return pred;
}

void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
    for (size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
}

MetricsReport eval_segmenter(const SegmenterParams<TF>& p, const DomainDataset& ds) {
    NoGrad ng;
    ConfusionMatrix cm(ds.schema.num_classes());
    bool any = false;
    for (size_t i = 0; i < ds.patches.size(); ++i) {
        if (!ds.patches[i].mask)
            throw ParamError("evaluate: patch " + std::to_string(i) + " has no labels");
        any = true;
        auto x = patch_batch(ds, {i});
        auto logits = segmenter_forward(p, x);
        accumulate_confusion(cm, argmax_classes(*logits), *ds.patches[i].mask);
    }
    if (!any) throw ParamError("evaluate: dataset has no labeled patches");
    return aggregate(cm);
}

void append_report_csv(std::ostream& os, int epoch, const MetricsReport& r,
                       const std::vector<std::string>& names) {
    auto row = [&os, epoch](const std::string& metric, const std::string& cls,
                            const std::optional<double>& v) {
        os << epoch << "," << metric << "," << cls << ",";
        if (v) os << std::setprecision(10) << *v;
        os << "\n";
    };
    row("overall_accuracy", "", r.overall_accuracy);
    row("macro_accuracy", "", r.macro_accuracy);
    row("macro_precision", "", r.macro_precision);
    row("macro_recall", "", r.macro_recall);
    row("macro_f1", "", r.macro_f1);
    row("mean_iou", "", r.mean_iou);
    for (int c = 0; c < r.cm.num_classes; ++c) {
        const auto& m = r.per_class[static_cast<size_t>(c)];
        std::string cls = c < static_cast<int>(names.size()) ? names[static_cast<size_t>(c)]
                                                             : "class_" + std::to_string(c);
        row("accuracy", cls, m.accuracy);
        row("precision", cls, m.precision);
        row("recall", cls, m.recall);
        row("f1", cls, m.f1);
        row("iou", cls, m.iou);
    }
}

void write_config_snapshot(const std::string& out_dir, const TrainConfig& cfg) {
    if (out_dir.empty()) return;
    fs::create_directories(out_dir);
    std::ofstream os(fs::path(out_dir) / "config.json");
    os << json::parse(cfg.to_json()).dump(2) << "\n";
}

std::vector<std::vector<TF>> snapshot_params(const std::vector<Tensor<TF>>& params) {
    std::vector<std::vector<TF>> snap;
    snap.reserve(params.size());
    for (const auto& p : params) snap.push_back(p->data);
    return snap;
}

void restore_params(const std::vector<Tensor<TF>>& params, const std::vector<std::vector<TF>>& snap) {
    for (size_t i = 0; i < params.size(); ++i) params[i]->data = snap[i];
}

}  // namespace

DomainDataset subset(const DomainDataset& ds, const std::string& split) {
    DomainDataset out;
    out.schema = ds.schema;
    for (const auto& p : ds.patches)
        if (p.split == split) out.patches.push_back(p);
    return out;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history,
                       const MetricsReport* initial_eval) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write history CSV '" + path + "'");
    os << "epoch,metric,class,value\n";
    if (initial_eval) append_report_csv(os, 0, *initial_eval, {});
    for (const auto& rec : history) {
        os << rec.epoch << ",train_loss,," << std::setprecision(10) << rec.train_loss << "\n";
        if (rec.eval) append_report_csv(os, rec.epoch, *rec.eval, {});
    }
}

void write_gan_history_csv(const std::string& path, const std::vector<GanEpochRecord>& history) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write history CSV '" + path + "'");
    os << "epoch,metric,class,value\n";
    for (const auto& r : history) {
        os << r.epoch << ",d_loss,," << std::setprecision(10) << r.d_loss << "\n";
        os << r.epoch << ",g_adv,," << std::setprecision(10) << r.g_adv << "\n";
        os << r.epoch << ",cycle,," << std::setprecision(10) << r.cycle << "\n";
        os << r.epoch << ",g_total_rolling,," << std::setprecision(10) << r.g_total << "\n";
        os << r.epoch << ",d_accuracy,," << std::setprecision(10) << r.d_accuracy << "\n";
    }
}

SegTrainResult step1_train_segmenter(const DomainDataset& source, const TrainConfig& cfg,
                                     const std::string& out_dir) {
    cfg.validate();
    set_num_threads(cfg.threads);
    write_config_snapshot(out_dir, cfg);

    auto train_idx = source.split_indices("train");
    if (train_idx.empty()) throw ParamError("step1: source dataset has no training patches");
    for (size_t i : train_idx)
        if (!source.patches[i].mask)
            throw ParamError("step1: source patch " + std::to_string(i) + " is unlabeled");

    SegmenterConfig scfg;
    scfg.in_channels = cfg.in_channels;
    scfg.num_classes = source.schema.num_classes();
    scfg.base_width = cfg.seg_base_width;
    auto params_net = init_segmenter<TF>(scfg, cfg.seed);
    auto params = params_net.parameters();
    auto adam = AdamState<TF>::make(params, cfg.lr_seg);

    DomainDataset val = subset(source, "test");
    bool has_val = !val.patches.empty();

    Rng order_rng(cfg.seed ^ 0x517cc1b727220a95ULL);
    SegTrainResult res;
    double best_acc = -1.0;
    std::vector<std::vector<TF>> best_snap = snapshot_params(params);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_indices(train_idx, order_rng);
        double loss_sum = 0.0;
        size_t n_batches = 0;
        for (size_t start = 0; start < train_idx.size(); start += static_cast<size_t>(cfg.batch_size)) {
            std::vector<size_t> batch(train_idx.begin() + static_cast<long>(start),
                                      train_idx.begin() +
                                          static_cast<long>(std::min(start + cfg.batch_size,
                                                                     train_idx.size())));
            auto x = patch_batch(source, batch);
            auto labels = patch_labels(source, batch);
            auto logits = segmenter_forward(params_net, x);
            auto loss = segmentation_loss(logits, labels);
            zero_grads(params);
            backward(loss);
            adam_step(params, adam);
            loss_sum += static_cast<double>(loss->data[0]);
            ++n_batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(n_batches);
        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            rec.eval = eval_segmenter(params_net, has_val ? val : source);
            if (rec.eval->overall_accuracy > best_acc) {
                best_acc = rec.eval->overall_accuracy;
                best_snap = snapshot_params(params);
                res.best_epoch = epoch;
            }
        }
        std::cerr << "step1 epoch " << epoch << "/" << cfg.epochs << " loss=" << rec.train_loss
                  << (rec.eval ? " val_acc=" + std::to_string(rec.eval->overall_accuracy) : "")
                  << "\n";
        res.history.push_back(std::move(rec));
    }

    restore_params(params, best_snap);
    res.best = pack_segmenter(params_net, static_cast<uint32_t>(res.best_epoch), cfg.seed, cfg.digest());
    if (!out_dir.empty()) {
        write_history_csv((fs::path(out_dir) / "metrics.csv").string(), res.history);
        save_checkpoint(res.best, (fs::path(out_dir) / "best.ckpt").string());
    }
    return res;
}

namespace {

// side-by-side original/translated grid for visual monitoring
void write_sample_grid(const std::string& path, const GeneratorParams<TF>& g,
                       const DomainDataset& source, const std::vector<size_t>& idx) {
    if (idx.empty()) return;
    NoGrad ng;
    Rng dummy(0);
    int t = source.patches[idx[0]].height;
    int n = static_cast<int>(idx.size());
    ImageU8 grid;
    grid.width = t * n;
    grid.height = t * 2;
    grid.channels = 3;
    grid.pixels.assign(static_cast<size_t>(grid.width) * grid.height * 3, 0);
    for (int k = 0; k < n; ++k) {
        const auto& p = source.patches[idx[static_cast<size_t>(k)]];
        auto x = make_tensor<TF>({1, p.channels, p.height, p.width}, p.image);
        auto y = generator_forward(g, x, false, dummy);
        for (int row = 0; row < 2; ++row) {
            const std::vector<TF>& src = row == 0 ? x->data : y->data;
            for (int yy = 0; yy < t; ++yy)
                for (int xx = 0; xx < t; ++xx)
                    for (int c = 0; c < 3; ++c)
                        grid.at(row * t + yy, k * t + xx, c) =
                            norm_to_u8(src[(static_cast<size_t>(c) * t + yy) * t + xx]);
        }
    }
    write_png(path, grid);
}

}  // namespace

GanTrainResult step2_train_gan(const DomainDataset& source, const DomainDataset& target,
                               const TrainConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    set_num_threads(cfg.threads);
    write_config_snapshot(out_dir, cfg);
    if (source.patches.empty() || target.patches.empty())
        throw ParamError("step2: both datasets must be non-empty");
    if (source.patches[0].height != target.patches[0].height ||
        source.patches[0].width != target.patches[0].width)
        throw ParamError("step2: source and target tile sizes differ");

    uint64_t digest = cfg.digest();
    GeneratorConfig gcfg;
    gcfg.in_channels = cfg.in_channels;
    gcfg.out_channels = cfg.in_channels;
    gcfg.base_width = cfg.gen_base_width;
    gcfg.dropout_p = cfg.gen_dropout_p;
    DiscriminatorConfig dcfg;
    dcfg.in_channels = cfg.in_channels;
    dcfg.base_width = cfg.disc_base_width;

    auto g_st = init_generator<TF>(gcfg, cfg.seed + 1);
    auto g_ts = init_generator<TF>(gcfg, cfg.seed + 2);
    auto d_s = init_discriminator<TF>(dcfg, cfg.seed + 3);
    auto d_t = init_discriminator<TF>(dcfg, cfg.seed + 4);

    std::vector<Tensor<TF>> g_params = g_st.parameters();
    {
        auto more = g_ts.parameters();
        g_params.insert(g_params.end(), more.begin(), more.end());
    }
    std::vector<Tensor<TF>> d_params = d_s.parameters();
    {
        auto more = d_t.parameters();
        d_params.insert(d_params.end(), more.begin(), more.end());
    }
    auto g_adam = AdamState<TF>::make(g_params, cfg.lr_gan);
    auto d_adam = AdamState<TF>::make(d_params, cfg.lr_gan);

    auto src_idx = source.split_indices("train");
    auto tgt_idx = target.split_indices("train");
    if (src_idx.empty() || tgt_idx.empty())
        throw ParamError("step2: both datasets need a train split");
    auto src_test = source.split_indices("test");
    auto tgt_test = target.split_indices("test");

    Rng order_rng(cfg.seed ^ 0x2545f4914f6cdd1dULL);
    Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    std::deque<double> g_roll;
    std::deque<int> d_calls;  // 1 = correct real/fake call
    auto push_roll = [&](std::deque<double>& q, double v) {
        q.push_back(v);
        if (static_cast<int>(q.size()) > cfg.rolling_window) q.pop_front();
    };
    auto push_call = [&](bool correct) {
        d_calls.push_back(correct ? 1 : 0);
        if (static_cast<int>(d_calls.size()) > 4 * cfg.rolling_window) d_calls.pop_front();
    };

    // held-out discriminator accuracy: real target/source patches vs
    // translations of the opposite test split
    auto heldout_d_accuracy = [&]() {
        NoGrad ng;
        Rng dummy(0);
        size_t cap = 16;
        int correct = 0, total = 0;
        auto run = [&](const DomainDataset& real_ds, const std::vector<size_t>& real_idx,
                       const DomainDataset& fake_src_ds, const std::vector<size_t>& fake_idx,
                       const DiscriminatorParams<TF>& d, const GeneratorParams<TF>& g) {
            for (size_t i = 0; i < std::min(cap, real_idx.size()); ++i) {
                auto x = patch_batch(real_ds, {real_idx[i]});
                auto p = discriminator_forward(d, x);
                correct += p->data[1] > 0.5f ? 1 : 0;
                ++total;
            }
            for (size_t i = 0; i < std::min(cap, fake_idx.size()); ++i) {
                auto x = patch_batch(fake_src_ds, {fake_idx[i]});
                auto f = generator_forward(g, x, false, dummy);
                auto p = discriminator_forward(d, f);
                correct += p->data[1] < 0.5f ? 1 : 0;
                ++total;
            }
        };
        const auto& rt = tgt_test.empty() ? tgt_idx : tgt_test;
        const auto& rs = src_test.empty() ? src_idx : src_test;
        run(target, rt, source, rs, d_t, g_st);
        run(source, rs, target, rt, d_s, g_ts);
        return total ? static_cast<double>(correct) / total : 0.0;
    };

    GanTrainResult res;
    auto snap_all = [&]() {
        res.g_st = pack_generator(g_st, 0, cfg.seed, digest);
        res.g_ts = pack_generator(g_ts, 0, cfg.seed, digest);
        res.d_s = pack_discriminator(d_s, 0, cfg.seed, digest);
        res.d_t = pack_discriminator(d_t, 0, cfg.seed, digest);
    };
    snap_all();

    size_t steps = std::min(src_idx.size(), tgt_idx.size());
    try {
        for (int epoch = 1; epoch <= cfg.gan_max_epochs; ++epoch) {
            shuffle_indices(src_idx, order_rng);
            shuffle_indices(tgt_idx, order_rng);
            double d_loss_sum = 0.0, adv_sum = 0.0, cyc_sum = 0.0;
            for (size_t s = 0; s < steps; ++s) {
                auto x_s = patch_batch(source, {src_idx[s]});
                auto x_t = patch_batch(target, {tgt_idx[s]});

                auto fake_t = generator_forward(g_st, x_s, true, dropout_rng);
                auto fake_s = generator_forward(g_ts, x_t, true, dropout_rng);

                // discriminator update on detached fakes
                auto p_t_real = select_column(discriminator_forward(d_t, x_t), 1);
                auto p_t_fake = select_column(discriminator_forward(d_t, detach(fake_t)), 1);
                auto p_s_real = select_column(discriminator_forward(d_s, x_s), 1);
                auto p_s_fake = select_column(discriminator_forward(d_s, detach(fake_s)), 1);
                auto d_loss = add(discriminator_loss(p_t_real, p_t_fake),
                                  discriminator_loss(p_s_real, p_s_fake));
                zero_grads(d_params);
                backward(d_loss);
                adam_step(d_params, d_adam);
                d_loss_sum += static_cast<double>(d_loss->data[0]);
                push_call(p_t_real->data[0] > 0.5f);
                push_call(p_t_fake->data[0] < 0.5f);
                push_call(p_s_real->data[0] > 0.5f);
                push_call(p_s_fake->data[0] < 0.5f);

                // generator update against the refreshed discriminators
                auto adv_st = generator_adv_loss(select_column(discriminator_forward(d_t, fake_t), 1));
                auto adv_ts = generator_adv_loss(select_column(discriminator_forward(d_s, fake_s), 1));
                auto rec_s = generator_forward(g_ts, fake_t, true, dropout_rng);
                auto rec_t = generator_forward(g_st, fake_s, true, dropout_rng);
                auto cyc = cycle_loss(x_s, rec_s, x_t, rec_t);
                auto g_total = total_generator_objective(adv_st, adv_ts, cyc, cfg.lambda_cycle);
                zero_grads(g_params);
                backward(g_total);
                adam_step(g_params, g_adam);

                adv_sum += static_cast<double>(adv_st->data[0] + adv_ts->data[0]);
                cyc_sum += static_cast<double>(cyc->data[0]);
                push_roll(g_roll, static_cast<double>(g_total->data[0]));
            }

            GanEpochRecord rec;
            rec.epoch = epoch;
            rec.d_loss = d_loss_sum / static_cast<double>(steps);
            rec.g_adv = adv_sum / static_cast<double>(steps);
            rec.cycle = cyc_sum / static_cast<double>(steps);
            rec.g_total = 0.0;
            for (double v : g_roll) rec.g_total += v;
            rec.g_total /= static_cast<double>(g_roll.size());
            if (cfg.d_accuracy_on_heldout) {
                rec.d_accuracy = heldout_d_accuracy();
            } else {
                int c = 0;
                for (int v : d_calls) c += v;
                rec.d_accuracy = d_calls.empty() ? 0.0 : static_cast<double>(c) / d_calls.size();
            }
            std::cerr << "step2 epoch " << epoch << " d_loss=" << rec.d_loss
                      << " g_adv=" << rec.g_adv << " cycle=" << rec.cycle
                      << " g_roll=" << rec.g_total << " d_acc=" << rec.d_accuracy << "\n";
            res.history.push_back(rec);
            snap_all();
            res.g_st.epoch = res.g_ts.epoch = res.d_s.epoch = res.d_t.epoch =
                static_cast<uint32_t>(epoch);

            if (!out_dir.empty() && cfg.sample_every > 0 && epoch % cfg.sample_every == 0) {
                std::vector<size_t> pick(src_test.begin(),
                                         src_test.begin() + static_cast<long>(std::min<size_t>(4, src_test.size())));
                if (pick.empty())
                    pick.assign(src_idx.begin(),
                                src_idx.begin() + static_cast<long>(std::min<size_t>(4, src_idx.size())));
                write_sample_grid((fs::path(out_dir) / ("samples_epoch" + std::to_string(epoch) + ".png")).string(),
                                  g_st, source, pick);
            }

            if (rec.d_accuracy > cfg.d_accuracy_min && rec.g_total < cfg.g_loss_max) {
                res.converged = true;
                break;
            }
        }
    } catch (const NumericError& e) {
        // keep the last-good end-of-epoch checkpoints
        res.aborted = true;
        res.abort_reason = e.what();
        std::cerr << "step2 aborted: " << e.what() << " (keeping last-good checkpoints)\n";
    }

    if (!out_dir.empty()) {
        write_gan_history_csv((fs::path(out_dir) / "metrics.csv").string(), res.history);
        save_checkpoint(res.g_st, (fs::path(out_dir) / "g_st.ckpt").string());
        save_checkpoint(res.g_ts, (fs::path(out_dir) / "g_ts.ckpt").string());
        save_checkpoint(res.d_s, (fs::path(out_dir) / "d_s.ckpt").string());
        save_checkpoint(res.d_t, (fs::path(out_dir) / "d_t.ckpt").string());
    }
    return res;
}

DomainDataset step3_translate(const Checkpoint& g_st_ckpt, const DomainDataset& source) {
    GeneratorParams<TF> g = unpack_generator(g_st_ckpt);
    if (!source.patches.empty() && source.patches[0].channels != g.cfg.in_channels)
        throw ShapeError("step3: dataset has " + std::to_string(source.patches[0].channels) +
                         " channels but the generator expects " + std::to_string(g.cfg.in_channels));
    NoGrad ng;
    Rng dummy(0);
    DomainDataset out;
    out.schema = source.schema;
    out.patches.reserve(source.patches.size());
    for (const auto& p : source.patches) {
        auto x = make_tensor<TF>({1, p.channels, p.height, p.width}, p.image);
        auto y = generator_forward(g, x, false, dummy);
        LabeledPatch q = p;  // copies mask, origin, split verbatim
        q.image = y->data;
        out.patches.push_back(std::move(q));
    }
    return out;
}

FinetuneResult step4_finetune(const Checkpoint& m_s, const DomainDataset& translated,
                              const DomainDataset& target_eval, const TrainConfig& cfg,
                              const std::string& out_dir) {
    cfg.validate();
    set_num_threads(cfg.threads);
    write_config_snapshot(out_dir, cfg);

    SegmenterParams<TF> net = unpack_segmenter(m_s);
    if (net.cfg.num_classes != translated.schema.num_classes())
        throw ParamError("step4: checkpoint has " + std::to_string(net.cfg.num_classes) +
                         " classes but the translated dataset has " +
                         std::to_string(translated.schema.num_classes()));
    if (m_s.config_digest != cfg.digest())
        std::cerr << "step4 warning: fine-tune config digest differs from the checkpoint's training config\n";

    auto train_idx = translated.split_indices("train");
    if (train_idx.empty()) throw ParamError("step4: translated dataset has no training patches");
    for (size_t i : train_idx)
        if (!translated.patches[i].mask)
            throw ParamError("step4: translated patch " + std::to_string(i) + " is unlabeled");

    auto params = net.parameters();
    auto adam = AdamState<TF>::make(params, cfg.lr_seg);
    Rng order_rng(cfg.seed ^ 0x6a09e667f3bcc909ULL);

    FinetuneResult res;
    res.initial_eval = eval_segmenter(net, target_eval);
    double best_acc = res.initial_eval.overall_accuracy;
    std::vector<std::vector<TF>> best_snap = snapshot_params(params);
    res.best_epoch = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_indices(train_idx, order_rng);
        double loss_sum = 0.0;
        size_t n_batches = 0;
        for (size_t start = 0; start < train_idx.size(); start += static_cast<size_t>(cfg.batch_size)) {
            std::vector<size_t> batch(train_idx.begin() + static_cast<long>(start),
                                      train_idx.begin() +
                                          static_cast<long>(std::min(start + cfg.batch_size,
                                                                     train_idx.size())));
            auto x = patch_batch(translated, batch);
            auto labels = patch_labels(translated, batch);
            auto logits = segmenter_forward(net, x);
            auto loss = segmentation_loss(logits, labels);
            zero_grads(params);
            backward(loss);
            adam_step(params, adam);
            loss_sum += static_cast<double>(loss->data[0]);
            ++n_batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(n_batches);
        rec.eval = eval_segmenter(net, target_eval);
        if (rec.eval->overall_accuracy > best_acc) {
            best_acc = rec.eval->overall_accuracy;
            best_snap = snapshot_params(params);
            res.best_epoch = epoch;
        }
        std::cerr << "step4 epoch " << epoch << "/" << cfg.epochs << " loss=" << rec.train_loss
                  << " target_acc=" << rec.eval->overall_accuracy << "\n";
        res.history.push_back(std::move(rec));
    }

    restore_params(params, best_snap);
    res.best = pack_segmenter(net, static_cast<uint32_t>(res.best_epoch), cfg.seed, cfg.digest());
    if (!out_dir.empty()) {
        write_history_csv((fs::path(out_dir) / "metrics.csv").string(), res.history,
                          &res.initial_eval);
        save_checkpoint(res.best, (fs::path(out_dir) / "best.ckpt").string());
    }
    return res;
}

MetricsReport evaluate(const Checkpoint& m, const DomainDataset& ds) {
    SegmenterParams<TF> net = unpack_segmenter(m);
    return eval_segmenter(net, ds);
}

}  // namespace uda
