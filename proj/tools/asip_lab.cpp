// asip-lab <experiment> --config <file> [--threads N] [--out DIR]
// asip-lab list

#include <iostream>
#include <string>

#include <boost/program_options.hpp>

#include "asiplab/harness.hpp"

namespace po = boost::program_options;

int main(int argc, char **argv) {
  po::options_description opts("options");
  opts.add_options()("help,h", "show usage")("config,c", po::value<std::string>(), "experiment config (JSON)")(
      "threads,t", po::value<long long>()->default_value(1), "worker threads")(
      "out,o", po::value<std::string>()->default_value("."), "output directory");
  po::options_description hidden;
  hidden.add_options()("experiment", po::value<std::string>(), "experiment name");
  po::options_description all;
  all.add(opts).add(hidden);
  po::positional_options_description pos;
  pos.add("experiment", 1);

  const auto usage = [&](std::ostream &os) {
    os << "usage: asip-lab <experiment> --config <file> [--threads N] [--out DIR]\n"
          "       asip-lab list\n"
       << opts;
  };

  po::variables_map vm;
  try {
    po::store(po::command_line_parser(argc, argv).options(all).positional(pos).run(), vm);
    po::notify(vm);
  } catch (const po::error &e) {
    std::cerr << "asip-lab: " << e.what() << "\n";
    usage(std::cerr);
    return 2;
  }
  if (vm.count("help")) {
    usage(std::cout);
    return 0;
  }
  if (!vm.count("experiment")) {
    usage(std::cerr);
    return 2;
  }
  const auto name = vm["experiment"].as<std::string>();
  if (name == "list") {
    for (const auto &e : asiplab::harness::experiments()) std::cout << e.name << "\t" << e.summary << "\n";
    return 0;
  }
  const auto names = asiplab::harness::experiment_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::cerr << "asip-lab: unknown experiment '" << name
              << "'; valid experiments: " << asiplab::harness::Section::join(names) << "\n";
    return 2;
  }
  if (!vm.count("config")) {
    std::cerr << "asip-lab: " << name << ": --config is required\n";
    return 2;
  }
  const long long threads = vm["threads"].as<long long>();
  if (threads < 1 || threads > 4096) {
    std::cerr << "asip-lab: --threads must lie in [1, 4096], got " << threads << "\n";
    return 2;
  }
  return asiplab::harness::run_and_emit(name, vm["config"].as<std::string>(), static_cast<unsigned>(threads),
                                        vm["out"].as<std::string>(), std::cerr);
}
