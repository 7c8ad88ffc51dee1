#ifndef MGD_PERTURB_HPP
#define MGD_PERTURB_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace mgd {

enum class PerturbMode { Weight, Node };

/// Which scalar degrees of freedom receive perturbations. In weight mode
/// every trainable parameter is a site (K = N_W). In node mode every
/// pre-activation is a site (K = activation count); maxpool layers
/// contribute none and biases are not separate sites.
struct SiteSet {
    PerturbMode mode = PerturbMode::Weight;
    std::size_t count = 0;
};

/// One realization of the perturbation process: a +/-delta value per site.
struct PerturbationVector {
    PerturbMode mode = PerturbMode::Weight;
    double delta = 0.0;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
};

/// Seeded source of i.i.d. Bernoulli +/-delta vectors. Single-owner; run
/// parallel replicas with independent streams and distinct seeds.
class PerturbationStream {
  public:
    PerturbationStream(SiteSet sites, double delta, std::uint64_t seed)
        : sites_(sites), delta_(delta), rng_(seed) {
        if (sites.count < 1) throw std::invalid_argument("perturbation stream: empty site set");
        if (!(delta > 0.0)) throw std::invalid_argument("perturbation stream: delta must be positive");
    }

    PerturbationVector sample() {
        PerturbationVector out;
        out.mode = sites_.mode;
        out.delta = delta_;
        out.values.resize(sites_.count);
        std::uint64_t word = 0;
        int bits_left = 0;
        for (std::size_t i = 0; i < sites_.count; ++i) {
            if (bits_left == 0) {
                word = rng_();
                bits_left = 64;
            }
            out.values[i] = (word & 1u) ? delta_ : -delta_;
            word >>= 1;
            --bits_left;
        }
        return out;
    }

    const SiteSet& sites() const { return sites_; }
    double delta() const { return delta_; }

  private:
    SiteSet sites_;
    double delta_;
    std::mt19937_64 rng_;
};

}  // namespace mgd

#endif
