// Command-line front end: dataset synthesis, training, evaluation, the
// gradient check, the variant ablation harness and single-image prediction.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "mcfa/mcfa.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"mcfa: cascaded multi-task facial attribute classification"};
    app.require_subcommand(1);

    // --- synth ---
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    mcfa::SynthOptions sopt;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n", sopt.count, "number of records")->required();
    synth->add_option("--seed", sopt.seed, "rng seed");
    synth->add_option("--side", sopt.image_side, "rendered image side in pixels");
    synth->add_option("--attrs", sopt.num_attributes, "number of attributes (1..8)");
    synth->add_option("--channels", sopt.channels, "image channels (1 or 3)");
    synth->add_option("--frac-attribute", sopt.frac_attribute, "attribute record fraction");
    synth->add_option("--frac-landmark", sopt.frac_landmark, "landmark record fraction");
    synth->add_option("--frac-face", sopt.frac_face, "face record fraction");
    synth->add_option("--frac-nonface", sopt.frac_nonface, "nonface record fraction");

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "train a model from a config and manifest");
    std::string train_config, train_manifest, train_out;
    train_cmd->add_option("--config", train_config, "key=value config file")->required();
    train_cmd->add_option("--manifest", train_manifest, "dataset manifest")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();

    // --- eval ---
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    std::string eval_model, eval_manifest;
    double eval_ts = 0.5, eval_tm = 0.5;
    eval_cmd->add_option("--model", eval_model, "model checkpoint")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
    eval_cmd->add_option("--ts", eval_ts, "S_Net face-score threshold");
    eval_cmd->add_option("--tm", eval_tm, "M_Net face-score threshold");

    // --- gradcheck ---
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
    std::uint64_t gc_seed = 12345;
    int gc_per_group = 3;
    gc_cmd->add_option("--seed", gc_seed, "rng seed");
    gc_cmd->add_option("--per-group", gc_per_group, "sampled parameters per group");

    // --- ablate ---
    auto* ablate_cmd = app.add_subcommand("ablate", "train all four task variants");
    std::string ab_config, ab_manifest, ab_out;
    ablate_cmd->add_option("--config", ab_config, "key=value config file")->required();
    ablate_cmd->add_option("--manifest", ab_manifest, "dataset manifest")->required();
    ablate_cmd->add_option("--out", ab_out, "output directory")->required();

    // --- predict ---
    auto* pred_cmd = app.add_subcommand("predict", "run the cascade on a single image");
    std::string pred_model, pred_image;
    double pred_ts = 0.5, pred_tm = 0.5;
    pred_cmd->add_option("--model", pred_model, "model checkpoint")->required();
    pred_cmd->add_option("--image", pred_image, "PGM/PPM image path")->required();
    pred_cmd->add_option("--ts", pred_ts, "S_Net face-score threshold");
    pred_cmd->add_option("--tm", pred_tm, "M_Net face-score threshold");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            auto manifest = mcfa::generate_synthetic_dataset(sopt, synth_out);
            std::cout << "wrote " << manifest.records.size() << " records to " << synth_out
                      << "/manifest.txt\n";
            return 0;
        }

        if (*train_cmd) {
            mcfa::TrainConfig cfg = mcfa::parse_train_config(train_config);
            auto manifest = mcfa::load_manifest(train_manifest, cfg.model.num_attributes,
                                                cfg.model.num_landmarks);
            mcfa::TrainResult r = mcfa::train(cfg, manifest, train_out, &std::cout);
            mcfa::write_metrics(std::cout, r.metrics);
            std::cout << "checkpoint: " << (fs::path(train_out) / "model_final.ckpt").string()
                      << '\n';
            return 0;
        }

        if (*eval_cmd) {
            mcfa::McfaModel model = mcfa::load_model(eval_model);
            auto manifest = mcfa::load_manifest(eval_manifest, model.config().num_attributes,
                                                model.config().num_landmarks);
            mcfa::Metrics m = mcfa::evaluate(model, manifest, {eval_ts, eval_tm});
            std::cout << "attribute accuracy (n=" << m.evaluated << ", rejected_s=" << m.rejected_at_s
                      << ", rejected_m=" << m.rejected_at_m << ")\n";
            for (std::size_t q = 0; q < m.per_attribute_accuracy.size(); ++q) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "  attr_%-2zu %6.2f%%", q,
                              100.0 * m.per_attribute_accuracy[q]);
                std::cout << buf << '\n';
            }
            char buf[64];
            std::snprintf(buf, sizeof(buf), "  average %6.2f%%", 100.0 * m.average_accuracy);
            std::cout << buf << "\n\n";
            mcfa::write_metrics(std::cout, m);
            return 0;
        }

        if (*gc_cmd) {
            mcfa::GradcheckReport rep =
                mcfa::gradcheck(mcfa::gradcheck_default_config(), gc_seed, gc_per_group);
            std::cout << rep.to_string();
            return rep.ok ? 0 : 1;
        }

        if (*ablate_cmd) {
            mcfa::TrainConfig cfg = mcfa::parse_train_config(ab_config);
            auto manifest = mcfa::load_manifest(ab_manifest, cfg.model.num_attributes,
                                                cfg.model.num_landmarks);
            mcfa::AblationReport rep = mcfa::ablate(cfg, manifest, ab_out, &std::cout);
            std::cout << rep.comparison_table(cfg.model.num_attributes);
            return 0;
        }

        if (*pred_cmd) {
            mcfa::McfaModel model = mcfa::load_model(pred_model);
            const auto& cfg = model.config();
            mcfa::Tensor img = mcfa::bilinear_resize(
                mcfa::adapt_channels(mcfa::read_pnm(pred_image), cfg.in_channels),
                cfg.input_sides[0], cfg.input_sides[0]);
            mcfa::PredictionResult r = mcfa::predict(model, img, {pred_ts, pred_tm});
            mcfa::write_prediction(std::cout, r);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
