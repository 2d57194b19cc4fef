// morphtag command-line interface.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "morphtag/morphtag.hpp"

namespace fs = std::filesystem;
using namespace morphtag;

namespace {

struct Overrides {
  std::optional<std::string> config_file;
  std::vector<std::pair<std::string, std::string>> values;
  std::vector<std::string> assignments;

  RunConfig resolve() const {
    RunConfig rc;
    if (config_file) rc.merge_file(*config_file);
    for (const auto& kv : assignments) rc.set_assignment(kv);
    for (const auto& [k, v] : values) rc.set(k, v);
    return rc;
  }
};

void bind(CLI::App* app, Overrides& o, const std::string& flag, const std::string& key,
          const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&o, key](const std::string& v) { o.values.emplace_back(key, v); }, help);
}

void bind_switch(CLI::App* app, Overrides& o, const std::string& flag, const std::string& key,
                 const std::string& value, const std::string& help) {
  app->add_flag_callback(flag, [&o, key, value] { o.values.emplace_back(key, value); }, help);
}

void add_run_options(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_file, "Run configuration file (key = value with [sections])")
      ->check(CLI::ExistingFile);
  app->add_option("--set", o.assignments, "Override any config key, e.g. --set train.beta=0.5");
  bind(app, o, "--train", "data.train", "Training split (CoNLL)");
  bind(app, o, "--dev", "data.dev", "Dev split (CoNLL)");
  bind(app, o, "--test", "data.test", "Test split (CoNLL), evaluated after training");
  bind(app, o, "--task", "data.task", "lid, pos or ner");
  bind(app, o, "--scheme-file", "data.scheme_file", "Label list, one per line");
  bind(app, o, "--embeddings", "data.embeddings", "Comma-separated static embedding files");
  bind(app, o, "--out", "paths.output_dir", "Output directory");
  bind(app, o, "--seed", "seed", "Random seed");
  bind(app, o, "--epochs", "train.epochs", "Training epochs");
  bind(app, o, "--batch-size", "train.batch_size", "Sentences per batch");
  bind(app, o, "--lr", "train.lr", "Adam learning rate");
  bind(app, o, "--beta", "train.beta", "Secondary-task loss weight");
  bind(app, o, "--lambda", "train.lambda", "L2 penalty");
  bind(app, o, "--scheduler", "train.scheduler", "plateau or stlr");
  bind(app, o, "--pooling", "encoder.pooling", "maxpool, attn, posattn or poshierattn");
  bind(app, o, "--experiment", "tagger.experiment", "Ablation rung: 1.2, 2.1, 2.2, 2.3, 3.1, 3.2, 3.3");
  bind(app, o, "--hidden", "tagger.hidden", "BiLSTM hidden size per direction");
  bind_switch(app, o, "--secondary", "tagger.use_secondary", "true", "Enable the simplified-LID head");
  bind_switch(app, o, "--no-secondary", "tagger.use_secondary", "false", "Disable the simplified-LID head");
  bind_switch(app, o, "--static", "tagger.use_static", "true", "Concatenate static word embeddings");
  bind_switch(app, o, "--no-static", "tagger.use_static", "false", "No static word embeddings");
  bind_switch(app, o, "--concat-ngram", "tagger.concat_ngram_to_crf", "true",
              "Feed the n-gram representation to the CRF");
  bind_switch(app, o, "--no-concat-ngram", "tagger.concat_ngram_to_crf", "false",
              "CRF sees BiLSTM features only");
  bind_switch(app, o, "--progressive-unfreeze", "train.progressive_unfreeze", "true",
              "Unfreeze parameter groups stage by stage");
}

LabelScheme scheme_for(const RunConfig& rc) {
  const Task task = parse_task(rc.get("data.task"));
  const std::string file = rc.get("data.scheme_file");
  return file.empty() ? LabelScheme::builtin(task) : LabelScheme::from_file(file, task);
}

Corpus load_corpus(const RunConfig& rc, bool need_train) {
  Corpus c;
  c.scheme = scheme_for(rc);
  auto read = [&](const std::string& key, Split& dst, bool required) {
    const std::string path = rc.get(key);
    if (path.empty()) {
      if (required) throw InputError("missing " + key + " (use --" + key.substr(5) + ")");
      return;
    }
    dst = parse_conll_file(path, c.scheme);
  };
  read("data.train", c.train, need_train);
  read("data.dev", c.dev, need_train);
  read("data.test", c.test, false);
  return c;
}

std::vector<EmbeddingTable> load_static(const RunConfig& rc, const TaggerConfig& cfg) {
  std::vector<EmbeddingTable> tables;
  if (!cfg.use_static) return tables;
  for (const auto& path : rc.get_list("data.embeddings")) {
    LoadedEmbeddings e = load_embeddings(path);
    if (e.duplicates) std::cerr << "warning: " << e.duplicates << " duplicate words in " << path << "\n";
    tables.push_back(std::move(e.table));
  }
  return tables;
}

CharVocab vocab_from(const Split& split) {
  std::vector<std::string> words;
  for (const auto& s : split)
    for (const auto& t : s.tokens) words.push_back(t.surface);
  return CharVocab::build(words);
}

std::string prepare_output(const RunConfig& rc) {
  const std::string dir = rc.output_dir();
  fs::create_directories(dir);
  write_file((fs::path(dir) / "run.cfg").string(), rc.serialize());
  return dir;
}

void print_epoch(const EpochMetrics& m) {
  std::printf("epoch %3d  lr %.6g  train_loss %.5f  dev_loss %.5f  dev_wF1 %.4f  dev_acc %.4f\n", m.epoch, m.lr,
              m.train_loss, m.dev_loss, m.dev_weighted_f1, m.dev_accuracy);
  std::fflush(stdout);
}

void finish_training(TaggerModel& model, const Corpus& corpus, const TrainConfig& tc, const std::string& dir) {
  std::ofstream log(fs::path(dir) / "metrics.jsonl", std::ios::binary);
  if (!log) throw InputError("cannot write metrics log in " + dir);
  const TrainResult r = train(model, corpus, tc, [&](const EpochMetrics& m) {
    log << to_json(m).dump() << '\n';
    log.flush();
    print_epoch(m);
  });
  save_checkpoint(model.to_checkpoint(), (fs::path(dir) / "model.ckpt").string());
  std::printf("best epoch %d, dev weighted F1 %.4f\n", r.best_epoch, r.best_dev_weighted_f1);
  if (!corpus.test.empty()) {
    const Evaluation ev = evaluate(model, corpus.test, tc.loss.beta);
    write_file((fs::path(dir) / "test_metrics.json").string(), to_json(ev).dump(2) + "\n");
    std::printf("test accuracy %.4f, weighted F1 %.4f\n", ev.report.accuracy, ev.report.weighted_f1);
  }
}

int cmd_synth(const std::optional<std::string>& spec_file, const std::string& out,
              const std::vector<std::string>& sets) {
  std::string text;
  if (spec_file) {
    std::ifstream in(*spec_file);
    if (!in) throw InputError("cannot open spec file " + *spec_file);
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  for (const auto& kv : sets) text += "\n" + kv + "\n";
  std::istringstream in(text);
  const SyntheticSpec spec = parse_synthetic_spec(in);
  const Corpus c = generate_synthetic(spec);
  fs::create_directories(out);
  const fs::path dir(out);
  write_file((dir / "train.conll").string(), serialize_conll(c.train));
  write_file((dir / "dev.conll").string(), serialize_conll(c.dev));
  write_file((dir / "test.conll").string(), serialize_conll(c.test));
  write_file((dir / "spec.cfg").string(), serialize_synthetic_spec(spec));
  write_file((dir / "stats.json").string(), dataset_stats(c).dump(2) + "\n");
  std::printf("wrote %zu/%zu/%zu sentences to %s\n", c.train.size(), c.dev.size(), c.test.size(),
              out.c_str());
  return 0;
}

int cmd_train(const Overrides& o) {
  const RunConfig rc = o.resolve();
  const TaggerConfig cfg = rc.tagger_config();
  const TrainConfig tc = rc.train_config();
  const Corpus corpus = load_corpus(rc, true);
  const std::string dir = prepare_output(rc);
  TaggerModel model(cfg, corpus.scheme, vocab_from(corpus.train), load_static(rc, cfg));
  model.initialize(rc.seed());
  finish_training(model, corpus, tc, dir);
  return 0;
}

int cmd_transfer(const Overrides& o) {
  RunConfig rc = o.resolve();
  const std::string pretrained_path = rc.get("paths.pretrained");
  if (pretrained_path.empty()) throw InputError("transfer needs --pretrained");
  const Checkpoint pretrained = load_checkpoint(pretrained_path);
  TaggerConfig cfg = rc.tagger_config();
  // The encoder shape comes from the pretrained model unless set explicitly.
  EncoderConfig enc;
  try {
    enc = pretrained.meta.at("config").at("encoder").get<EncoderConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("pretrained checkpoint: ") + e.what());
  }
  for (const auto& [key, field] : std::map<std::string, int*>{{"encoder.char_emb_dim", &enc.char_emb_dim},
                                                              {"encoder.max_word_len", &enc.max_word_len},
                                                              {"encoder.attention_dim", &enc.attention_dim},
                                                              {"encoder.token_dim", &enc.token_dim}})
    if (rc.is_explicit(key)) *field = static_cast<int>(rc.get_int(key));
  if (rc.is_explicit("encoder.orders")) enc.orders = cfg.encoder.orders;
  if (rc.is_explicit("encoder.channels")) enc.channels = cfg.encoder.channels;
  if (rc.is_explicit("encoder.highway")) enc.highway = cfg.encoder.highway;
  if (rc.is_explicit("encoder.pooling") || rc.is_explicit("tagger.experiment")) enc.pooling = cfg.encoder.pooling;
  cfg.encoder = enc;
  const TrainConfig tc = rc.train_config();
  const Corpus corpus = load_corpus(rc, true);
  const std::string dir = prepare_output(rc);
  auto model = make_transfer_model(pretrained, cfg, corpus.scheme, tc.transfer_mode, rc.seed(),
                                   load_static(rc, cfg));
  const std::string before = encoder_checksum(*model);
  std::printf("transfer mode %s, encoder checksum %s\n", std::string(to_string(tc.transfer_mode)).c_str(),
              before.c_str());
  finish_training(*model, corpus, tc, dir);
  std::printf("encoder checksum after training %s\n", encoder_checksum(*model).c_str());
  return 0;
}

int cmd_eval(const std::optional<std::string>& model_path, const std::string& data, bool gold_as_pred,
             const std::string& task, const std::optional<std::string>& out, double beta) {
  nlohmann::json j;
  if (gold_as_pred) {
    const LabelScheme scheme = LabelScheme::builtin(parse_task(task));
    const Split split = parse_conll_file(data, scheme);
    std::vector<std::string> gold;
    std::vector<std::vector<std::string>> gold_s;
    for (const auto& s : split) {
      gold_s.emplace_back();
      for (const auto& t : s.tokens) {
        gold.push_back(t.label);
        gold_s.back().push_back(t.label);
      }
    }
    Evaluation ev;
    ev.report = f1_report(gold, gold);
    ev.wa_f1 = wa_f1(ev.report);
    if (scheme.task() == Task::NER) ev.entity = entity_f1(gold_s, gold_s);
    j = to_json(ev);
    j.erase("loss");
  } else {
    if (!model_path) throw InputError("eval needs --model (or --gold-as-pred)");
    auto model = TaggerModel::from_checkpoint(load_checkpoint(*model_path));
    const Split split = parse_conll_file(data, model->scheme());
    j = to_json(evaluate(*model, split, beta));
  }
  const std::string text = j.dump(2) + "\n";
  if (out) write_file(*out, text);
  else std::cout << text;
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& data, const std::optional<std::string>& out) {
  auto model = TaggerModel::from_checkpoint(load_checkpoint(model_path));
  std::ifstream in(data, std::ios::binary);
  if (!in) throw InputError("cannot open " + data);
  std::string text;
  for (const auto& words : read_token_lines(in)) {
    const Prediction p = model->predict(words);
    for (std::size_t i = 0; i < words.size(); ++i) {
      text += words[i] + "\t" + p.labels[i];
      if (!p.simplified.empty()) text += "\t" + p.simplified[i];
      text += "\n";
    }
    text += "\n";
  }
  if (out) write_file(*out, text);
  else std::cout << text;
  return 0;
}

int cmd_attn_export(const std::string& model_path, const std::string& data, const std::string& out,
                    std::optional<std::uint64_t> shuffle_seed) {
  auto model = TaggerModel::from_checkpoint(load_checkpoint(model_path));
  const Split split = parse_conll_file(data, model->scheme());
  std::ofstream os(out, std::ios::binary);
  if (!os) throw InputError("cannot write " + out);
  const std::size_t n = export_traces(*model, split, os, shuffle_seed);
  std::printf("wrote %zu attention records to %s\n", n, out.c_str());
  return 0;
}

int cmd_stats(const Overrides& o, const std::optional<std::string>& out) {
  const RunConfig rc = o.resolve();
  const Corpus c = load_corpus(rc, false);
  const std::string text = dataset_stats(c).dump(2) + "\n";
  if (out) write_file(*out, text);
  else std::cout << text;
  return 0;
}

int cmd_kfold(const std::string& data, const std::string& task, std::size_t k, std::uint64_t seed,
              const std::string& out) {
  const Split all = parse_conll_file(data, LabelScheme::builtin(parse_task(task)));
  fs::create_directories(out);
  for (std::size_t f = 0; f < k; ++f) {
    auto [train, held] = kfold_split(all, k, f, seed);
    const std::string base = (fs::path(out) / ("fold" + std::to_string(f))).string();
    write_file(base + ".train.conll", serialize_conll(train));
    write_file(base + ".test.conll", serialize_conll(held));
  }
  std::printf("wrote %zu folds to %s\n", k, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"morphtag: character n-gram attention taggers for code-switched text"};
  app.require_subcommand(1);

  std::optional<std::string> spec_file;
  std::string synth_out;
  std::vector<std::string> synth_sets;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic code-switched corpus");
  synth->add_option("--spec", spec_file, "Spec file (key = value); defaults to the demo spec")
      ->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--set", synth_sets, "Override a spec key, e.g. --set switch_prob=0");

  Overrides train_o, transfer_o, stats_o;
  auto* trn = app.add_subcommand("train", "Train a tagger");
  add_run_options(trn, train_o);

  auto* xfer = app.add_subcommand("transfer", "Train a tagger on top of a pretrained encoder");
  add_run_options(xfer, transfer_o);
  bind(xfer, transfer_o, "--pretrained", "paths.pretrained", "Pretrained checkpoint");
  bind(xfer, transfer_o, "--mode,--transfer", "train.transfer", "none, frozen or trainable");

  std::optional<std::string> model_path, out_file;
  std::string data, task = "lid";
  bool gold_as_pred = false;
  double beta = 0.2;
  auto* ev = app.add_subcommand("eval", "Score a model on a labeled corpus (JSON)");
  ev->add_option("--model", model_path, "Checkpoint");
  ev->add_option("--data", data, "Labeled CoNLL file")->required();
  ev->add_flag("--gold-as-pred", gold_as_pred, "Debug: score the gold labels against themselves");
  ev->add_option("--task", task, "Label scheme for --gold-as-pred");
  ev->add_option("--beta", beta, "Secondary weight used in the reported loss");
  ev->add_option("--out", out_file, "Write JSON here instead of stdout");

  std::string pred_model;
  auto* pr = app.add_subcommand("predict", "Tag a token-per-line file");
  pr->add_option("--model", pred_model, "Checkpoint")->required();
  pr->add_option("--data", data, "Tokens, one per line, blank line between sentences")->required();
  pr->add_option("--out", out_file, "Write CoNLL output here instead of stdout");

  std::string attn_out;
  std::optional<std::uint64_t> shuffle_seed;
  auto* ax = app.add_subcommand("attn-export", "Export attention weights as JSON lines");
  ax->add_option("--model", pred_model, "Checkpoint")->required();
  ax->add_option("--data", data, "Labeled CoNLL file")->required();
  ax->add_option("--out", attn_out, "Output .jsonl")->required();
  ax->add_option("--shuffle-positions", shuffle_seed, "Draw position rows at random with this seed");

  auto* st = app.add_subcommand("stats", "Label distributions, utterance classes and CMI (JSON)");
  st->add_option_function<std::string>(
      "--data", [&](const std::string& v) { stats_o.values.emplace_back("data.train", v); },
      "Corpus file (reported as the train split)");
  bind(st, stats_o, "--train", "data.train", "Train split");
  bind(st, stats_o, "--dev", "data.dev", "Dev split");
  bind(st, stats_o, "--test", "data.test", "Test split");
  bind(st, stats_o, "--task", "data.task", "lid, pos or ner");
  bind(st, stats_o, "--scheme-file", "data.scheme_file", "Label list, one per line");
  st->add_option("--out", out_file, "Write JSON here instead of stdout");

  std::size_t k = 5;
  std::uint64_t kseed = 1;
  std::string kout;
  auto* kf = app.add_subcommand("kfold", "Split a corpus into k train/test folds");
  kf->add_option("--data", data, "Labeled CoNLL file")->required();
  kf->add_option("--task", task, "lid, pos or ner");
  kf->add_option("--k", k, "Number of folds");
  kf->add_option("--seed", kseed, "Shuffle seed");
  kf->add_option("--out", kout, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(spec_file, synth_out, synth_sets);
    if (*trn) return cmd_train(train_o);
    if (*xfer) return cmd_transfer(transfer_o);
    if (*ev) return cmd_eval(model_path, data, gold_as_pred, task, out_file, beta);
    if (*pr) return cmd_predict(pred_model, data, out_file);
    if (*ax) return cmd_attn_export(pred_model, data, attn_out, shuffle_seed);
    if (*st) return cmd_stats(stats_o, out_file);
    if (*kf) return cmd_kfold(data, task, k, kseed, kout);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
