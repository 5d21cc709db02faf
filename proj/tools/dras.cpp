#include <iostream>

#include <CLI11.hpp>

#include "dras/cli.hpp"
#include "dras/version.hpp"

int main(int argc, char** argv) {
  using namespace dras::cli;
  CLI::App app{"Dual-reference age synthesis"};
  app.set_version_flag("--version", dras::kVersion);
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* in = app.add_subcommand("ingest", "Index a face corpus into split manifests");
  in->add_option("dataset_dir", ingest.dataset_dir, "Corpus directory")->required();
  in->add_option("--format", ingest.format, "utkface or cacd_csv")->check(CLI::IsMember({"utkface", "cacd_csv"}));
  in->add_option("--csv", ingest.csv, "Identity sidecar CSV for cacd_csv");
  in->add_option("--out", ingest.out, "Output directory")->required();
  in->add_option("--seed", ingest.seed, "Split seed");
  in->add_flag("!--no-augment", ingest.augment, "Skip flip augmentation of the train split");

  TrainArgs train;
  std::string train_scale;
  auto* tr = app.add_subcommand("train", "Run the two training stages");
  tr->add_option("--config", train.config, "key = value config file");
  tr->add_option("--seed", train.seed, "Seed override");
  tr->add_option("--scale", train_scale, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  tr->add_option("--stage", train.stage, "1, 2 or both")->check(CLI::IsMember({"1", "2", "both"}));
  tr->add_option("--data", train.data, "Ingest output directory")->required();
  tr->add_option("--checkpoint", train.checkpoint, "Completed stage-1 checkpoint (stage 2)");
  tr->add_option("--out", train.out, "Output directory")->required();

  SynthesizeArgs synth;
  auto* sy = app.add_subcommand("synthesize", "Render a synthesis grid");
  sy->add_option("--checkpoint", synth.checkpoint, "Checkpoint directory")->required();
  sy->add_option("--identity", synth.identity_images, "Identity reference image(s)")->required();
  sy->add_option("--age", synth.age_images, "Age reference image(s)");
  sy->add_option("--out", synth.out, "Output directory")->required();

  EvaluateArgs eval;
  auto* ev = app.add_subcommand("evaluate", "Run an evaluation protocol");
  ev->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory")->required();
  ev->add_option("--protocol", eval.protocol, "age_acc, id_features or consistency")
      ->required()
      ->check(CLI::IsMember({"age_acc", "id_features", "consistency"}));
  ev->add_option("--data", eval.data, "Ingest output directory")->required();
  ev->add_option("--classifier", eval.classifier, "oracle, random or a classifier blob");
  ev->add_option("--client", eval.client, "local or http")->check(CLI::IsMember({"local", "http"}));
  ev->add_option("--http-endpoint", eval.http_endpoint, "http://host:port/path");
  ev->add_option("--pairs", eval.max_pairs, "Pairs sampled per consistency cell (0 = all)");
  ev->add_option("--seed", eval.seed, "Sampling seed");
  ev->add_option("--out", eval.out, "Output directory")->required();

  TrainClassifierArgs clf;
  auto* tc = app.add_subcommand("train-classifier", "Train the desk age-group classifier");
  tc->add_option("--data", clf.data, "Ingest output directory")->required();
  tc->add_option("--out", clf.out, "Classifier blob path")->required();
  tc->add_option("--epochs", clf.epochs, "Epochs");
  tc->add_option("--seed", clf.seed, "Seed");

  MakeToyArgs toy;
  auto* mt = app.add_subcommand("make-toy", "Write a synthetic face corpus");
  mt->add_option("--out", toy.out, "Output directory")->required();
  mt->add_option("--identities", toy.identities, "Number of identities");
  mt->add_option("--ages", toy.ages, "Ages rendered per identity");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  if (*in) return cmd_ingest(ingest, std::cout, std::cerr);
  if (*tr) {
    if (!train_scale.empty()) train.scale = dras::parse_scale(train_scale);
    return cmd_train(train, std::cout, std::cerr);
  }
  if (*sy) return cmd_synthesize(synth, std::cout, std::cerr);
  if (*ev) return cmd_evaluate(eval, std::cout, std::cerr);
  if (*tc) return cmd_train_classifier(clf, std::cout, std::cerr);
  return cmd_make_toy(toy, std::cout, std::cerr);
}
