// aerialda command line: one pipeline stage or dataset tool per invocation.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"
#include "uda/data.hpp"
#include "uda/metrics.hpp"
#include "uda/pipeline.hpp"
#include "uda/tensor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uda;

namespace {

// exit codes: 0 ok, 1 usage, 2 data, 3 numerical
constexpr int kUsageError = 1;
constexpr int kDataError = 2;
constexpr int kNumericError = 3;

bool g_error_json = false;

int fail(int code, const std::string& type, const std::string& msg) {
    std::cerr << "error: " << msg << "\n";
    if (g_error_json)
        std::cout << json{{"error", {{"type", type}, {"message", msg}, {"exit_code", code}}}}.dump()
                  << "\n";
    return code;
}

// Merge a JSON config file into cfg; flags given on the command line win
// because CLI11 assigns them after this runs. Unknown keys are rejected.
void apply_config_file(TrainConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file '" + path + "'");
    json j;
    is >> j;
    const std::set<std::string> known = {
        "epochs",         "batch_size",     "lr_seg",        "lr_gan",
        "seed",           "lambda_cycle",   "d_accuracy_min", "g_loss_max",
        "rolling_window", "gan_max_epochs", "d_accuracy_on_heldout",
        "eval_every",     "sample_every",   "threads",       "in_channels",
        "seg_base_width", "gen_base_width", "disc_base_width", "gen_dropout_p"};
    for (auto& [key, val] : j.items())
        if (!known.count(key)) throw ParamError("config file: unknown key '" + key + "'");
    json base = json::parse(cfg.to_json());
    base.merge_patch(j);
    cfg.epochs = base["epochs"];
    cfg.batch_size = base["batch_size"];
    cfg.lr_seg = base["lr_seg"];
    cfg.lr_gan = base["lr_gan"];
    cfg.seed = base["seed"];
    cfg.lambda_cycle = base["lambda_cycle"];
    cfg.d_accuracy_min = base["d_accuracy_min"];
    cfg.g_loss_max = base["g_loss_max"];
    cfg.rolling_window = base["rolling_window"];
    cfg.gan_max_epochs = base["gan_max_epochs"];
    cfg.d_accuracy_on_heldout = base["d_accuracy_on_heldout"];
    cfg.eval_every = base["eval_every"];
    cfg.sample_every = base["sample_every"];
    cfg.threads = base["threads"];
    cfg.in_channels = base["in_channels"];
    cfg.seg_base_width = base["seg_base_width"];
    cfg.gen_base_width = base["gen_base_width"];
    cfg.disc_base_width = base["disc_base_width"];
    cfg.gen_dropout_p = base["gen_dropout_p"];
}

void add_train_flags(CLI::App* cmd, TrainConfig& cfg) {
    cmd->add_option("--epochs", cfg.epochs, "Training epochs");
    cmd->add_option("--batch-size", cfg.batch_size, "Patches per optimizer step");
    cmd->add_option("--lr-seg", cfg.lr_seg, "Segmenter Adam learning rate");
    cmd->add_option("--lr-gan", cfg.lr_gan, "GAN Adam learning rate");
    cmd->add_option("--lambda-cycle", cfg.lambda_cycle, "Cycle-consistency weight");
    cmd->add_option("--d-accuracy-min", cfg.d_accuracy_min, "GAN stop: discriminator accuracy threshold");
    cmd->add_option("--g-loss-max", cfg.g_loss_max, "GAN stop: rolling generator loss threshold");
    cmd->add_option("--rolling-window", cfg.rolling_window, "Rolling window for the generator loss");
    cmd->add_option("--gan-max-epochs", cfg.gan_max_epochs, "Hard GAN epoch cap");
    cmd->add_flag("--d-accuracy-on-heldout,!--d-accuracy-on-batches", cfg.d_accuracy_on_heldout,
                  "Measure discriminator accuracy on held-out test patches (default) or training batches");
    cmd->add_option("--eval-every", cfg.eval_every, "Validation cadence in epochs");
    cmd->add_option("--sample-every", cfg.sample_every, "Translated sample grid cadence (0 = off)");
    cmd->add_option("--in-channels", cfg.in_channels, "Image channel count");
    cmd->add_option("--seg-base-width", cfg.seg_base_width, "Segmenter base channel width");
    cmd->add_option("--gen-base-width", cfg.gen_base_width, "Generator base channel width");
    cmd->add_option("--disc-base-width", cfg.disc_base_width, "Discriminator base channel width");
    cmd->add_option("--gen-dropout-p", cfg.gen_dropout_p, "Generator decoder dropout probability");
}

std::vector<float> image_to_norm(const ImageU8& img) {
    // interleaved u8 -> planar [-1,1]
    std::vector<float> out(static_cast<size_t>(img.channels) * img.height * img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                out[(static_cast<size_t>(c) * img.height + y) * img.width + x] =
                    u8_to_norm(img.at(y, x, c));
    return out;
}

MetricsReport report_from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open report '" + path + "'");
    json j;
    is >> j;
    if (!j.contains("confusion")) throw ParamError("report '" + path + "' has no confusion matrix");
    auto rows = j["confusion"];
    ConfusionMatrix cm(static_cast<int>(rows.size()));
    for (int t = 0; t < cm.num_classes; ++t)
        for (int p = 0; p < cm.num_classes; ++p)
            cm.at(t, p) = rows[static_cast<size_t>(t)][static_cast<size_t>(p)].get<uint64_t>();
    return aggregate(cm);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unsupervised domain adaptation for aerial semantic segmentation"};
    app.require_subcommand(1);

    TrainConfig cfg;
    std::string out_dir;
    std::string config_path;
    // the config file must be folded in before CLI11 assigns flag values, so
    // sniff it out of argv first; CLI11 then re-parses it for validation
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];

    app.add_option("--seed", cfg.seed, "Global RNG seed");
    app.add_option("--threads", cfg.threads, "Worker threads (1 = reference deterministic mode)");
    app.add_option("--out-dir", out_dir, "Run output directory");
    app.add_option("--config", config_path, "JSON config file; explicit flags override it");
    app.add_flag("--error-json", g_error_json, "On failure also print a machine-readable error JSON");

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "Generate a synthetic two-domain benchmark");
    SynthConfig scfg;
    std::string synth_out;
    synth->add_option("--out", synth_out, "Output directory (source/ and target/ subdirs)")->required();
    synth->add_option("--tile-size", scfg.tile_size, "Square tile edge, multiple of 16");
    synth->add_option("--classes", scfg.num_classes, "Number of classes (2-6)");
    synth->add_option("--source-train", scfg.source_train, "Source training patches");
    synth->add_option("--source-test", scfg.source_test, "Source test patches");
    synth->add_option("--target-train", scfg.target_train, "Target training patches");
    synth->add_option("--target-eval", scfg.target_eval, "Target evaluation patches");
    synth->add_flag("--sensor-shift", scfg.sensor_shift, "Apply the sensor domain-shift factor");
    synth->add_flag("--resolution-shift", scfg.resolution_shift, "Apply the resolution domain-shift factor");
    synth->add_flag("--class-shift", scfg.class_representation_shift,
                    "Apply the class-representation domain-shift factor");

    // ---- tile ----
    auto* tile_cmd = app.add_subcommand("tile", "Cut a PNG (and optional mask) into a patch dataset");
    std::string tile_in, tile_mask, tile_out, tile_policy = "drop";
    int tile_size = 512;
    std::string tile_split = "train";
    tile_cmd->add_option("--in", tile_in, "Input image PNG")->required();
    tile_cmd->add_option("--mask", tile_mask, "Aligned palette mask PNG");
    tile_cmd->add_option("--out", tile_out, "Output dataset directory")->required();
    tile_cmd->add_option("--size", tile_size, "Tile edge, multiple of 16");
    tile_cmd->add_option("--policy", tile_policy, "Remainder policy: drop | reflect")
        ->check(CLI::IsMember({"drop", "reflect"}));
    tile_cmd->add_option("--split", tile_split, "Split tag for the produced patches");

    // ---- stats ----
    auto* stats = app.add_subcommand("stats", "Class distribution table of a labeled dataset");
    std::string stats_data;
    stats->add_option("--data", stats_data, "Dataset directory")->required();

    // ---- train-seg ----
    auto* train_seg = app.add_subcommand("train-seg", "Step 1: train the segmenter on labeled source data");
    std::string ts_data;
    train_seg->add_option("--data", ts_data, "Labeled source dataset directory")->required();
    add_train_flags(train_seg, cfg);

    // ---- train-gan ----
    auto* train_gan = app.add_subcommand("train-gan", "Step 2: train the cross-domain translation GAN");
    std::string tg_source, tg_target;
    train_gan->add_option("--source", tg_source, "Source dataset directory")->required();
    train_gan->add_option("--target", tg_target, "Target dataset directory")->required();
    add_train_flags(train_gan, cfg);

    // ---- translate ----
    auto* translate = app.add_subcommand("translate", "Step 3: translate a dataset through a generator");
    std::string tr_gen, tr_data, tr_out;
    translate->add_option("--generator", tr_gen, "Generator checkpoint (g_st.ckpt)")->required();
    translate->add_option("--data", tr_data, "Source dataset directory")->required();
    translate->add_option("--out", tr_out, "Output dataset directory")->required();

    // ---- finetune ----
    auto* finetune = app.add_subcommand("finetune", "Step 4: fine-tune the segmenter on translated data");
    std::string ft_ckpt, ft_data, ft_eval;
    finetune->add_option("--checkpoint", ft_ckpt, "Step-1 segmenter checkpoint")->required();
    finetune->add_option("--data", ft_data, "Translated labeled dataset directory")->required();
    finetune->add_option("--eval", ft_eval, "Labeled target evaluation dataset directory")->required();
    add_train_flags(finetune, cfg);

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a segmenter checkpoint on a labeled dataset");
    std::string ev_ckpt, ev_data, ev_json;
    eval_cmd->add_option("--checkpoint", ev_ckpt, "Segmenter checkpoint")->required();
    eval_cmd->add_option("--data", ev_data, "Labeled dataset directory")->required();
    eval_cmd->add_option("--json", ev_json, "Also write the report as JSON to this file");

    // ---- report ----
    auto* report = app.add_subcommand("report", "Side-by-side before/after metric comparison");
    std::string rp_before, rp_after;
    report->add_option("--before", rp_before, "Pre-adaptation report JSON (from eval --json)")->required();
    report->add_option("--after", rp_after, "Post-adaptation report JSON")->required();

    // global flags may appear after the subcommand name
    for (auto* sub : app.get_subcommands(nullptr)) sub->fallthrough();

    try {
        if (!config_path.empty()) apply_config_file(cfg, config_path);
    } catch (const std::exception& e) {
        return fail(kDataError, "data", e.what());
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return fail(kUsageError, "usage", e.what());
    }

    try {
        cfg.validate();

        if (synth->parsed()) {
            SynthResult r = synth_generate(scfg, cfg.seed);
            save_dataset(r.source, (fs::path(synth_out) / "source").string());
            save_dataset(r.target, (fs::path(synth_out) / "target").string());
            std::cout << "wrote " << r.source.patches.size() << " source and "
                      << r.target.patches.size() << " target patches to " << synth_out << "\n";
        } else if (tile_cmd->parsed()) {
            ImageU8 img = read_png(tile_in);
            std::optional<std::vector<int>> mask;
            DatasetSchema schema = isprs_schema();
            if (!tile_mask.empty()) mask = decode_mask(read_png(tile_mask), schema.palette);
            bool warned = false;
            auto patches = tile(image_to_norm(img), img.channels, img.height, img.width, mask,
                                tile_size, tile_policy == "drop" ? TilePolicy::drop : TilePolicy::reflect_pad,
                                fs::path(tile_in).stem().string(), &warned);
            if (warned) std::cerr << "warning: image smaller than one tile, nothing produced\n";
            DomainDataset ds;
            ds.schema = schema;
            ds.patches = std::move(patches);
            for (auto& p : ds.patches) p.split = tile_split;
            save_dataset(ds, tile_out);
            std::cout << "wrote " << ds.patches.size() << " patches to " << tile_out << "\n";
        } else if (stats->parsed()) {
            DomainDataset ds = load_dataset(stats_data);
            auto dist = class_distribution(ds);
            std::cout << "class                    pixels%\n";
            double sum = 0.0;
            for (size_t c = 0; c < dist.size(); ++c) {
                std::cout << std::left << std::setw(24) << ds.schema.class_names[c] << " "
                          << std::right << std::fixed << std::setprecision(2) << std::setw(6)
                          << dist[c] << "\n";
                sum += dist[c];
            }
            std::cout << std::left << std::setw(24) << "total" << " " << std::right << std::fixed
                      << std::setprecision(2) << std::setw(6) << sum << "\n";
        } else if (train_seg->parsed()) {
            DomainDataset ds = load_dataset(ts_data);
            auto res = step1_train_segmenter(ds, cfg, out_dir);
            std::cout << "best epoch " << res.best_epoch << "\n";
        } else if (train_gan->parsed()) {
            DomainDataset src = load_dataset(tg_source);
            DomainDataset tgt = load_dataset(tg_target);
            auto res = step2_train_gan(src, tgt, cfg, out_dir);
            if (res.aborted)
                std::cout << "aborted after numerical failure (" << res.abort_reason
                          << "); last-good checkpoints kept\n";
            else
                std::cout << (res.converged ? "converged" : "epoch cap reached") << " after "
                          << res.history.size() << " epochs\n";
        } else if (translate->parsed()) {
            Checkpoint g = load_checkpoint(tr_gen);
            DomainDataset ds = load_dataset(tr_data);
            DomainDataset out = step3_translate(g, ds);
            save_dataset(out, tr_out);
            std::cout << "wrote " << out.patches.size() << " translated patches to " << tr_out << "\n";
        } else if (finetune->parsed()) {
            Checkpoint m = load_checkpoint(ft_ckpt);
            DomainDataset ds = load_dataset(ft_data);
            DomainDataset ev = load_dataset(ft_eval);
            auto res = step4_finetune(m, ds, ev, cfg, out_dir);
            std::cout << "best epoch " << res.best_epoch
                      << (res.best_epoch == 0 ? " (warm start kept)" : "") << "\n";
        } else if (eval_cmd->parsed()) {
            Checkpoint m = load_checkpoint(ev_ckpt);
            DomainDataset ds = load_dataset(ev_data);
            MetricsReport r = evaluate(m, ds);
            std::cout << report_to_text(r, ds.schema.class_names);
            if (!ev_json.empty()) {
                std::ofstream os(ev_json);
                if (!os) throw IoError("cannot write '" + ev_json + "'");
                os << report_to_json(r, ds.schema.class_names) << "\n";
            }
        } else if (report->parsed()) {
            MetricsReport before = report_from_json_file(rp_before);
            MetricsReport after = report_from_json_file(rp_after);
            std::cout << comparison_to_text(before, after, isprs_schema().class_names);
        }
    } catch (const NumericError& e) {
        return fail(kNumericError, "numerical", e.what());
    } catch (const std::exception& e) {
        return fail(kDataError, "data", e.what());
    }
    return 0;
}
