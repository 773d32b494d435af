// Command-line front end: synthetic data generation, two-stage training,
// decoding, scoring, and the analysis reports.

#include <climits>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mgmo/data.hpp"
#include "mgmo/metrics.hpp"
#include "mgmo/model.hpp"
#include "mgmo/objectives.hpp"
#include "mgmo/sampling.hpp"
#include "mgmo/trainer.hpp"

namespace fs = std::filesystem;
using namespace mgmo;

namespace {

std::vector<std::vector<std::string>> read_token_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<std::vector<std::string>> lines;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (is >> tok) tokens.push_back(tok);
    lines.push_back(std::move(tokens));
  }
  return lines;
}

std::vector<int> to_ids(const std::vector<std::string>& tokens, const Vocab& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    const int id = vocab.id(t);
    ids.push_back(id < 0 ? Vocab::kUnkId : id);
  }
  return ids;
}

int run_gen_data(const std::string& task, const std::string& out_dir, int n_train, int n_valid,
                 int n_test, int vocab_size, int min_len, int max_len_tokens, double expand_prob,
                 int max_seq_len, uint64_t seed) {
  fs::create_directories(out_dir);
  Vocab vocab = Vocab::synthetic(vocab_size);
  vocab.save((fs::path(out_dir) / "vocab.txt").string());
  const std::vector<std::pair<std::string, int>> splits = {
      {"train.tsv", n_train}, {"valid.tsv", n_valid}, {"test.tsv", n_test}};
  uint64_t split_id = 0;
  for (const auto& [name, count] : splits) {
    Rng rng(derive_seed(seed, 100, split_id++));
    ParallelCorpus corpus;
    if (task == "mapping") {
      corpus = gen_mapping_task(count, vocab_size, min_len, max_len_tokens, expand_prob, rng,
                                max_seq_len);
    } else if (task == "multimodal") {
      corpus = gen_multimodal_task(count, vocab_size, min_len, max_len_tokens, rng, max_seq_len);
    } else {
      throw std::runtime_error("unknown task '" + task + "' (expected mapping|multimodal)");
    }
    save_tsv(corpus, (fs::path(out_dir) / name).string(), vocab);
  }
  std::cout << "wrote vocab + train/valid/test under " << out_dir << "\n";
  return 0;
}

int run_training_command(const std::string& config_path, Stage stage) {
  RunConfig config = load_run_config(config_path);
  config.stage = stage;
  validate(config);
  if (config.train_data.empty() || config.valid_data.empty() || config.vocab_file.empty()) {
    throw std::runtime_error("config must set train_data, valid_data and vocab");
  }
  if (config.out_checkpoint.empty()) throw std::runtime_error("config must set out_checkpoint");

  Vocab vocab = Vocab::load(config.vocab_file);
  ParallelCorpus train = load_tsv(config.train_data, vocab);
  ParallelCorpus valid = load_tsv(config.valid_data, vocab);

  TrainResult result;
  if (stage == Stage::Cmlm) {
    NatModel model(config.model_config(vocab.size()));
    result = train_cmlm(model, train, valid, vocab, config);
    model.save_checkpoint(config.out_checkpoint);
    if (config.steps > 0) {
      EvalResult ev = evaluate(model, valid, config.length_candidates);
      std::cout << "best step " << result.best_step << " valid BLEU " << result.best_valid_bleu
                << " (GLEU " << ev.gleu << ", mean len " << ev.mean_length << ")\n";
    } else {
      std::cout << "saved initial checkpoint (0 steps)\n";
    }
  } else {
    NatModel model = NatModel::load_checkpoint(config.init_checkpoint);
    if (model.config().vocab_size != vocab.size()) {
      throw std::runtime_error("checkpoint vocabulary size does not match " + config.vocab_file);
    }
    result = finetune_mgmo(model, train, valid, vocab, config);
    model.save_checkpoint(config.out_checkpoint);
    EvalResult ev = evaluate(model, valid, config.length_candidates);
    std::cout << "best step " << result.best_step << " valid BLEU " << result.best_valid_bleu
              << " (GLEU " << ev.gleu << ", mean len " << ev.mean_length << ")\n";
  }
  if (!config.log_file.empty()) write_log(config.log_file, result.log);
  return 0;
}

int run_decode(const std::string& checkpoint, const std::string& vocab_path,
               const std::string& input, const std::string& output, int length_candidates) {
  NatModel model = NatModel::load_checkpoint(checkpoint);
  Vocab vocab = Vocab::load(vocab_path);
  auto lines = read_token_lines(input);
  std::ofstream out(output);
  if (!out) throw std::runtime_error("cannot write " + output);
  for (const auto& tokens : lines) {
    if (tokens.empty()) {
      out << "\n";
      continue;
    }
    const auto hyp = model.greedy_decode(to_ids(tokens, vocab), length_candidates);
    for (size_t i = 0; i < hyp.size(); ++i) {
      if (i) out << ' ';
      out << vocab.token(hyp[i]);
    }
    out << '\n';
  }
  return 0;
}

int run_score(const std::string& hyp_path, const std::string& ref_path, const std::string& metric_name,
              int max_ngram) {
  const Metric metric = parse_metric(metric_name);
  auto hyp_lines = read_token_lines(hyp_path);
  auto ref_lines = read_token_lines(ref_path);
  if (hyp_lines.size() != ref_lines.size()) {
    throw std::runtime_error("line count mismatch: " + std::to_string(hyp_lines.size()) + " vs " +
                             std::to_string(ref_lines.size()));
  }
  // Transient vocabulary over the observed tokens keeps the ID metrics
  // honest and lets chrF see the real strings.
  Vocab vocab;
  for (const auto& lines : {std::cref(ref_lines), std::cref(hyp_lines)}) {
    for (const auto& l : lines.get())
      for (const auto& t : l) vocab.add(t);
  }
  std::vector<std::vector<int>> hyps, refs;
  for (const auto& l : hyp_lines) hyps.push_back(to_ids(l, vocab));
  for (const auto& l : ref_lines) refs.push_back(to_ids(l, vocab));

  double sum = 0.0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    const double s = score_pair(metric, hyps[i], refs[i], &vocab, max_ngram);
    sum += s;
    std::cout << i + 1 << '\t' << s << '\n';
  }
  const double aggregate =
      metric == Metric::Bleu ? corpus_bleu(hyps, refs) : sum / static_cast<double>(hyps.size());
  std::cout << "corpus\t" << aggregate << '\n';
  return 0;
}

std::vector<int> parse_edges(const std::string& text) {
  std::vector<int> edges;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) edges.push_back(std::stoi(part));
  }
  return edges;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"non-autoregressive seq2seq training with metric-based multi-granularity finetuning"};
  app.require_subcommand(1);

  // gen-data
  std::string task = "mapping", out_dir = "data";
  int n_train = 10000, n_valid = 1000, n_test = 1000, vocab_size = 64;
  int min_len = 3, max_len_tokens = 12, max_seq_len = 32;
  double expand_prob = 0.0;
  uint64_t seed = 1;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic parallel corpus");
  gen->add_option("--task", task, "mapping|multimodal");
  gen->add_option("--out-dir", out_dir, "output directory");
  gen->add_option("--n-train", n_train);
  gen->add_option("--n-valid", n_valid);
  gen->add_option("--n-test", n_test);
  gen->add_option("--vocab-size", vocab_size, "content tokens (reserved symbols excluded)");
  gen->add_option("--min-len", min_len);
  gen->add_option("--max-len", max_len_tokens);
  gen->add_option("--expand-prob", expand_prob, "per-token expansion probability (mapping task)");
  gen->add_option("--max-seq-len", max_seq_len, "model position limit");
  gen->add_option("--seed", seed);

  // train-cmlm / finetune-mgmo
  std::string config_path;
  auto* train = app.add_subcommand("train-cmlm", "masked-prediction pretraining stage");
  train->add_option("--config", config_path, "key=value config file")->required();
  auto* finetune = app.add_subcommand("finetune-mgmo", "metric-based finetuning stage");
  finetune->add_option("--config", config_path, "key=value config file")->required();

  // decode
  std::string checkpoint, vocab_path, input_path, output_path;
  int length_candidates = 5;
  auto* decode = app.add_subcommand("decode", "greedy parallel decoding with length reranking");
  decode->add_option("--checkpoint", checkpoint)->required();
  decode->add_option("--vocab", vocab_path)->required();
  decode->add_option("--input", input_path, "source sentences, one per line")->required();
  decode->add_option("--output", output_path)->required();
  decode->add_option("--length-candidates", length_candidates);

  // score
  std::string hyp_path, ref_path, metric_name = "gleu";
  int max_ngram = 6;
  auto* score = app.add_subcommand("score", "score hypothesis file against reference file");
  score->add_option("--hyp", hyp_path)->required();
  score->add_option("--ref", ref_path)->required();
  score->add_option("--metric", metric_name, "gleu|bleu|chrf|ter|rouge2");
  score->add_option("--max-ngram", max_ngram);

  // analyze
  auto* analyze = app.add_subcommand("analyze", "reports over models, data and masking");
  analyze->require_subcommand(1);
  std::string data_path, edges_text = "4,6,8,10,12";
  double gamma = 8.0;
  int draws = 100000;
  auto* lengths = analyze->add_subcommand("lengths", "corpus BLEU per reference-length bucket");
  lengths->add_option("--checkpoint", checkpoint)->required();
  lengths->add_option("--vocab", vocab_path)->required();
  lengths->add_option("--data", data_path)->required();
  lengths->add_option("--edges", edges_text, "comma-separated inclusive upper bounds");
  lengths->add_option("--length-candidates", length_candidates);
  auto* gran = analyze->add_subcommand("granularity", "exposed-run length distribution of the mask schedule");
  gran->add_option("--data", data_path)->required();
  gran->add_option("--vocab", vocab_path)->required();
  gran->add_option("--gamma", gamma);
  gran->add_option("--draws", draws);
  gran->add_option("--seed", seed);
  auto* conf = analyze->add_subcommand("confidence", "mean argmax probability and its complement");
  conf->add_option("--checkpoint", checkpoint)->required();
  conf->add_option("--vocab", vocab_path)->required();
  conf->add_option("--data", data_path)->required();
  auto* rep = analyze->add_subcommand("repetition", "adjacent-token repetition rate of a hypothesis file");
  rep->add_option("--hyp", hyp_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return run_gen_data(task, out_dir, n_train, n_valid, n_test, vocab_size, min_len,
                          max_len_tokens, expand_prob, max_seq_len, seed);
    }
    if (train->parsed()) return run_training_command(config_path, Stage::Cmlm);
    if (finetune->parsed()) return run_training_command(config_path, Stage::Mgmo);
    if (decode->parsed()) {
      return run_decode(checkpoint, vocab_path, input_path, output_path, length_candidates);
    }
    if (score->parsed()) return run_score(hyp_path, ref_path, metric_name, max_ngram);
    if (analyze->parsed()) {
      if (lengths->parsed()) {
        NatModel model = NatModel::load_checkpoint(checkpoint);
        Vocab vocab = Vocab::load(vocab_path);
        ParallelCorpus corpus = load_tsv(data_path, vocab);
        for (const auto& b : analyze_lengths(model, corpus, parse_edges(edges_text), length_candidates)) {
          std::cout << b.lo << '-' << (b.hi == INT_MAX ? std::string("inf") : std::to_string(b.hi))
                    << '\t' << b.count << '\t' << b.bleu << '\n';
        }
      } else if (gran->parsed()) {
        Vocab vocab = Vocab::load(vocab_path);
        ParallelCorpus corpus = load_tsv(data_path, vocab);
        std::vector<int> lens;
        for (const auto& p : corpus.pairs) lens.push_back(static_cast<int>(p.target.size()));
        Rng rng(seed);
        const auto props = granularity_histogram(lens, gamma, draws, rng);
        for (size_t i = 0; i < props.size(); ++i) {
          std::cout << (i + 1 == props.size() ? std::to_string(i + 1) + "+" : std::to_string(i + 1))
                    << '\t' << props[i] << '\n';
        }
      } else if (conf->parsed()) {
        NatModel model = NatModel::load_checkpoint(checkpoint);
        Vocab vocab = Vocab::load(vocab_path);
        ParallelCorpus corpus = load_tsv(data_path, vocab);
        const auto stats = confidence_stats(model, corpus);
        std::cout << "mean_argmax_prob\t" << stats.mean_argmax_prob << '\n'
                  << "ncm_proxy\t" << stats.ncm_proxy << '\n';
      } else if (rep->parsed()) {
        auto lines = read_token_lines(hyp_path);
        Vocab vocab;
        std::vector<std::vector<int>> hyps;
        for (auto& l : lines) {
          if (l.empty()) continue;
          std::vector<int> ids;
          for (auto& t : l) ids.push_back(vocab.add(t));
          hyps.push_back(std::move(ids));
        }
        std::cout << "repetition_rate\t" << repetition_rate(hyps) << '\n';
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
