// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qcg/analysis.hpp"
#include "qcg/calibrate.hpp"
#include "qcg/error.hpp"
#include "qcg/eval.hpp"
#include "qcg/io.hpp"
#include "qcg/model.hpp"
#include "qcg/perturb.hpp"
#include "qcg/report.hpp"

namespace qcg::cli {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

struct CliConfig {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string format = "table";
  bool json = false;
  bool csv = false;

  OutputFormat output() const {
    if (json) return OutputFormat::json;
    if (csv) return OutputFormat::csv;
    return parse_output_format(format);
  }
};

/// "1,5" -> {1, 5}
template <typename T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    const auto item = s.substr(start, end - start);
    require(!item.empty(), ErrorKind::parameter, "empty item in list '" + s + "'");
    try {
      std::size_t used = 0;
      const auto v = std::stoll(item, &used);
      require(used == item.size() && v >= 0, ErrorKind::parameter, "bad list item '" + item + "'");
      out.push_back(static_cast<T>(v));
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::parameter, "bad list item '" + item + "'");
    }
    if (end == s.size()) break;
    start = end + 1;
  }
  return out;
}

/// "1x2560x10240,8x64x64"
inline std::vector<MatmulDims> parse_dims(const std::string& s) {
  std::vector<MatmulDims> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    auto item = s.substr(start, end - start);
    for (auto& c : item)
      if (c == 'x') c = ',';
    const auto v = parse_list<std::size_t>(item);
    require(v.size() == 3, ErrorKind::parameter, "dims must look like MxKxN");
    out.push_back({v[0], v[1], v[2]});
    if (end == s.size()) break;
    start = end + 1;
  }
  return out;
}

inline std::string help_text(CLI::App& app) { return app.help(); }

/// Runs one qcg invocation. Machine-readable results go to `out`,
/// diagnostics to `err`.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"qcg: post-training quantization toolkit for decoder-only code models", "qcg"};
  app.require_subcommand(1);
  app.fallthrough();

  CliConfig cfg;
  app.add_option("--seed", cfg.seed, "RNG seed (QCG_SEED overrides)");
  app.add_option("--threads", cfg.threads, "worker threads for analysis and calibration")->check(CLI::PositiveNumber);
  app.add_option("--format", cfg.format, "output format")->check(CLI::IsMember({"table", "csv", "json"}));
  app.add_flag("--json", cfg.json, "emit a JSON array of row objects");
  app.add_flag("--csv", cfg.csv, "emit CSV");

  std::function<void()> action;
  auto emit = [&](const Report& r) { out << render(r, cfg.output()); };

  // fixture
  ModelConfig mc;
  std::string out_path;
  int d_ff = 0;
  auto* fixture = app.add_subcommand("fixture", "write a deterministic fp32 fixture model");
  fixture->add_option("--out", out_path, "output QTZ1 path")->required();
  fixture->add_option("--vocab", mc.vocab_size);
  fixture->add_option("--d-model", mc.d_model);
  fixture->add_option("--heads", mc.n_heads);
  fixture->add_option("--layers", mc.n_layers);
  fixture->add_option("--d-ff", d_ff, "default 4 * d_model");
  fixture->add_option("--max-seq-len", mc.max_seq_len);
  fixture->callback([&] {
    action = [&] {
      mc.d_ff = d_ff > 0 ? d_ff : 4 * mc.d_model;
      save_bundle(init_fixture(mc, cfg.seed), out_path);
      err << "wrote " << out_path << " (" << mc.parameter_count() << " parameters)\n";
    };
  });

  // quantize
  std::string in_path, scales_path, mode = "dynamic", weights = "per-tensor";
  int bits = 8, act_bits = 8;
  bool quantize_head = false;
  auto* quant = app.add_subcommand("quantize", "quantize the linear-layer weights of a bundle");
  quant->add_option("--in", in_path)->required();
  quant->add_option("--out", out_path)->required();
  quant->add_option("--mode", mode)->check(CLI::IsMember({"weight-only", "dynamic", "static"}));
  quant->add_option("--weights", weights)->check(CLI::IsMember({"per-tensor", "per-column"}));
  quant->add_option("--bits", bits, "weight bitwidth");
  quant->add_option("--act-bits", act_bits, "activation bitwidth");
  quant->add_option("--scales", scales_path, "calibrated scale table (static mode)");
  quant->add_flag("--quantize-head", quantize_head, "also quantize the output projection");
  quant->callback([&] {
    action = [&] {
      QuantScheme s{parse_quant_mode(mode), parse_granularity(weights), bits, act_bits, quantize_head};
      ActivationScales scales;
      if (!scales_path.empty()) {
        const auto bytes = read_file(scales_path);
        json j;
        try {
          j = json::parse(bytes.begin(), bytes.end());
        } catch (const json::exception& e) {
          throw Error(ErrorKind::parse, std::string("bad scale table: ") + e.what());
        }
        const auto table = scale_table_from_json(j);
        require(table.bitwidth == act_bits, ErrorKind::inconsistency,
                "scale table was calibrated for " + std::to_string(table.bitwidth) + "-bit activations");
        scales = table.activation_scales();
      }
      save_bundle(quantize_model(load_bundle(in_path), s, std::move(scales)), out_path);
      err << "wrote " << out_path << "\n";
    };
  });

  // calibrate
  std::string model_path, data_path, probe_path;
  int grid = kDefaultGridSize;
  std::size_t sample_cap = kDefaultSampleCap;
  auto* calib = app.add_subcommand("calibrate", "choose static activation clip ranges by MSE grid search");
  calib->add_option("--model", model_path)->required();
  calib->add_option("--data", data_path, "token JSONL calibration set")->required();
  calib->add_option("--out", out_path, "scale table JSON")->required();
  calib->add_option("--act-bits", act_bits);
  calib->add_option("--grid", grid);
  calib->add_option("--sample-cap", sample_cap);
  calib->callback([&] {
    action = [&] {
      const auto m = load_bundle(model_path);
      const auto stats = collect_stats(m, read_token_sequences(data_path), sample_cap, cfg.seed);
      const auto table = calibrate_scales(stats, act_bits, grid, cfg.threads);
      write_text(out_path, table.to_json().dump(2) + "\n");
      emit(to_report(table));
    };
  });

  // run
  int max_new = 16;
  float temperature = 0.0f;
  auto* run = app.add_subcommand("run", "generate continuations for token JSONL prompts");
  run->add_option("--model", model_path)->required();
  run->add_option("--input", in_path, "token JSONL prompts")->required();
  run->add_option("--out", out_path, "output JSONL (default stdout)");
  run->add_option("--max-new", max_new);
  run->add_option("--temperature", temperature, "0 selects greedy decoding");
  run->callback([&] {
    action = [&] {
      const auto m = load_bundle(model_path);
      const auto scheme = m.quant ? m.quant->scheme : QuantScheme::fp32();
      const auto prompts = read_token_sequences(in_path);
      std::vector<std::vector<Token>> outputs(prompts.size());
      parallel_for(prompts.size(), cfg.threads, [&](std::size_t i) {
        const auto strat = temperature > 0.0f ? DecodeStrategy::sample(temperature, cfg.seed + i)
                                              : DecodeStrategy::greedy();
        outputs[i] = generate(m, prompts[i], max_new, strat, scheme);
      });
      const auto text = token_sequences_to_jsonl(outputs);
      if (out_path.empty()) out << text; else write_text(out_path, text);
    };
  });

  // analyze
  auto* analyze = app.add_subcommand("analyze", "diagnostic reports");
  analyze->require_subcommand(1);
  std::string fp_path, q_path, widths = "512,1024,2048,4096", sizes;
  auto* size = analyze->add_subcommand("size", "storage ratio of two bundles");
  size->add_option("--fp", fp_path)->required();
  size->add_option("--q", q_path)->required();
  size->callback([&] { action = [&] { emit(to_report(size_report(fp_path, q_path))); }; });

  auto* noise = analyze->add_subcommand("noise", "weight noise vs width and granularity");
  noise->add_option("--widths", widths);
  noise->add_option("--bits", bits);
  noise->callback([&] {
    action = [&] {
      emit(to_report(noise_sweep(parse_list<std::size_t>(widths), {Granularity::per_tensor, Granularity::per_column},
                                 bits, cfg.seed, cfg.threads)));
    };
  });

  auto* depth = analyze->add_subcommand("depth", "per-layer hidden-state error vs fp32");
  depth->add_option("--model", model_path)->required();
  depth->add_option("--probe", probe_path)->required();
  depth->add_option("--mode", mode)->check(CLI::IsMember({"fp32", "weight-only", "dynamic"}));
  depth->add_option("--weights", weights)->check(CLI::IsMember({"per-tensor", "per-column"}));
  depth->add_option("--bits", bits);
  depth->add_option("--act-bits", act_bits);
  depth->callback([&] {
    action = [&] {
      const QuantScheme s{parse_quant_mode(mode), parse_granularity(weights), bits, act_bits, false};
      emit(to_report(depth_profile(load_bundle(model_path), s, read_token_sequences(probe_path), cfg.threads)));
    };
  });

  auto* maxact = analyze->add_subcommand("maxact", "distribution of per-example max activations");
  maxact->add_option("--model", model_path)->required();
  maxact->add_option("--data", data_path)->required();
  maxact->add_option("--sample-cap", sample_cap);
  maxact->callback([&] {
    action = [&] {
      const auto stats = collect_stats(load_bundle(model_path), read_token_sequences(data_path), sample_cap, cfg.seed);
      emit(to_report(max_activation_report(stats)));
    };
  });

  auto* calib_size = analyze->add_subcommand("calib-size", "agreement vs calibration-set size");
  calib_size->add_option("--model", model_path)->required();
  calib_size->add_option("--data", data_path)->required();
  calib_size->add_option("--probe", probe_path)->required();
  calib_size->add_option("--sizes", sizes)->required();
  calib_size->add_option("--weights", weights)->check(CLI::IsMember({"per-tensor", "per-column"}));
  calib_size->add_option("--bits", bits);
  calib_size->add_option("--act-bits", act_bits);
  calib_size->add_option("--grid", grid);
  calib_size->add_option("--sample-cap", sample_cap);
  calib_size->callback([&] {
    action = [&] {
      SweepOptions o;
      o.activation_bits = act_bits;
      o.weight_bits = bits;
      o.weight_granularity = parse_granularity(weights);
      o.grid_size = grid;
      o.sample_cap = sample_cap;
      o.seed = cfg.seed;
      o.threads = cfg.threads;
      emit(to_report(calibration_size_sweep(load_bundle(model_path), read_token_sequences(data_path),
                                            parse_list<std::size_t>(sizes), read_token_sequences(probe_path), o)));
    };
  });

  // passk
  std::string results_path, ks = "1,5";
  std::int64_t n_samples = 10;
  auto* passk = app.add_subcommand("passk", "unbiased pass@k over a pass/fail matrix");
  passk->add_option("--results", results_path, "pass matrix JSONL")->required();
  passk->add_option("--k", ks);
  passk->add_option("--n", n_samples, "samples per task (0 accepts any uniform n)");
  passk->callback([&] {
    action = [&] {
      const auto m = read_pass_matrix(results_path);
      require(!m.empty(), ErrorKind::empty_input, "pass matrix has no tasks");
      if (n_samples > 0)
        for (const auto& t : m)
          require(t.n() == n_samples, ErrorKind::inconsistency,
                  "task '" + t.task_id + "' has " + std::to_string(t.n()) + " samples, expected " +
                      std::to_string(n_samples));
      Report r;
      std::vector<Cell> row;
      for (auto k : parse_list<std::int64_t>(ks)) {
        r.columns.push_back("pass@" + std::to_string(k));
        row.emplace_back(aggregate_pass_at_k(m, k));
      }
      r.add(std::move(row));
      emit(r);
    };
  });

  // robustness
  std::string base_path, perturbed_path;
  auto* robust = app.add_subcommand("robustness", "pass@1 drop under perturbation plus rank-sum test");
  robust->add_option("--base", base_path, "unperturbed pass matrix JSONL")->required();
  robust->add_option("--perturbed", perturbed_path, "perturbed pass matrix JSONL")->required();
  robust->callback([&] {
    action = [&] {
      const auto a = read_pass_matrix(base_path), b = read_pass_matrix(perturbed_path);
      auto per_task = [](const PassMatrix& m) {
        std::vector<double> v;
        for (const auto& t : m) v.push_back(pass_at_k(t.n(), t.c(), 1));
        return v;
      };
      const double p_base = aggregate_pass_at_k(a, 1), p_pert = aggregate_pass_at_k(b, 1);
      const auto test = rank_sum_test(per_task(a), per_task(b));
      Report r{{"pass1_unperturbed", "pass1_perturbed", "drop_pct", "u", "p_value", "exact"}, {}};
      r.add({p_base, p_pert, robustness_drop(p_base, p_pert), test.u, test.p_value, test.exact});
      emit(r);
    };
  });

  // bleu
  std::string pairs_path;
  auto* bleu = app.add_subcommand("bleu", "smoothed sentence BLEU-4 per pair");
  bleu->add_option("--pairs", pairs_path, "JSONL of candidate/reference pairs")->required();
  bleu->callback([&] {
    action = [&] {
      const auto pairs = read_bleu_pairs(pairs_path);
      require(!pairs.empty(), ErrorKind::empty_input, "no BLEU pairs");
      Report r{{"pair", "bleu"}, {}};
      double sum = 0.0;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const double s = smoothed_bleu(pairs[i].candidate, pairs[i].reference);
        sum += s;
        r.add({std::to_string(i), s});
      }
      r.add({std::string("mean"), sum / static_cast<double>(pairs.size())});
      emit(r);
    };
  });

  // perturb
  std::string level = "char", lexicon_path, paraphrase_path, text;
  double rate = -1.0;
  auto* perturb = app.add_subcommand("perturb", "semantics-preserving prompt perturbations");
  perturb->add_option("--level", level)->check(CLI::IsMember({"char", "word", "sentence"}));
  perturb->add_option("--input", in_path, "JSONL of {\"id\", \"text\"} prompts");
  perturb->add_option("--text", text, "perturb a single string instead");
  perturb->add_option("--rate", rate, "default 0.15");
  perturb->add_option("--lexicon", lexicon_path, "synonym TSV (word level)");
  perturb->add_option("--paraphrases", paraphrase_path, "paraphrase JSONL (sentence level)");
  perturb->add_option("--out", out_path, "output JSONL (default stdout)");
  perturb->callback([&] {
    action = [&] {
      const auto lvl = parse_perturb_level(level);
      std::vector<std::pair<std::string, std::string>> prompts;
      if (!in_path.empty()) {
        for_each_jsonl(in_path, [&](const json& j, int) {
          prompts.emplace_back(j.at("id").get<std::string>(), j.value("text", std::string{}));
        });
      } else {
        require(app.get_subcommand("perturb")->count("--text") > 0, ErrorKind::parameter,
                "perturb needs --input or --text");
        prompts.emplace_back("0", text);
      }
      SynonymLexicon lexicon;
      ParaphraseTable paraphrases;
      if (lvl == PerturbLevel::word) {
        require(!lexicon_path.empty(), ErrorKind::parameter, "word level needs --lexicon");
        lexicon = SynonymLexicon::load(lexicon_path);
      }
      if (lvl == PerturbLevel::sentence) {
        require(!paraphrase_path.empty(), ErrorKind::parameter, "sentence level needs --paraphrases");
        paraphrases = ParaphraseTable::load(paraphrase_path);
      }
      std::string result;
      for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto& [id, body] = prompts[i];
        const std::uint64_t seed = cfg.seed + i;
        std::string perturbed;
        switch (lvl) {
          case PerturbLevel::character:
            perturbed = perturb_char(body, rate < 0 ? kDefaultCharRate : rate, seed);
            break;
          case PerturbLevel::word:
            perturbed = perturb_word(body, lexicon, rate < 0 ? kDefaultWordRate : rate, seed);
            break;
          case PerturbLevel::sentence: perturbed = perturb_sentence(id, paraphrases); break;
        }
        result += json{{"id", id}, {"text", perturbed}}.dump() + "\n";
      }
      if (out_path.empty()) out << result; else write_text(out_path, result);
    };
  });

  // bench
  std::string dims;
  int repeats = 5;
  auto* bench = app.add_subcommand("bench", "fp32 vs int8 matmul timing (informational)");
  bench->add_option("--dims", dims, "comma-separated MxKxN list");
  bench->add_option("--repeats", repeats);
  bench->callback([&] {
    action = [&] {
      emit(to_report(int_matmul_bench(dims.empty() ? default_bench_dims() : parse_dims(dims), repeats, cfg.seed)));
    };
  });

  // hosting
  HostingConfig hc;
  double predictions = 1000.0;
  auto* hosting = app.add_subcommand("hosting", "linear carbon and price estimate");
  hosting->add_option("--latency", hc.latency, "seconds per prediction")->required();
  hosting->add_option("--carbon-rate", hc.carbon_rate, "gCO2eq per hour")->required();
  hosting->add_option("--price-rate", hc.price_rate, "price per hour")->required();
  hosting->add_option("--predictions", predictions);
  hosting->callback([&] { action = [&] { emit(to_report(hosting_estimate(hc, predictions))); }; });

  std::vector<const char*> argv{"qcg"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "qcg: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  if (const char* env = std::getenv("QCG_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::logic_error&) {
      err << "qcg: QCG_SEED must be an unsigned integer\n";
      return kExitUsage;
    }
  }

  try {
    require(static_cast<bool>(action), ErrorKind::parameter, "no subcommand selected");
    action();
  } catch (const Error& e) {
    err << "qcg: " << e.what() << "\n";
    return e.kind() == ErrorKind::parameter ? kExitUsage : kExitData;
  } catch (const json::exception& e) {
    err << "qcg: parse error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "qcg: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

inline int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace qcg::cli
