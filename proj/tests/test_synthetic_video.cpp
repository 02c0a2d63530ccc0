#include "support.hpp"

#include "dualrep/errors.hpp"

#include <set>

using namespace dualrep;
using namespace dualrep::testing;

TEST(GenerateDataset, ZeroDriftAndNoiseGivesConstantFrames) {
    VideoSpec s = small_spec();
    s.drift_scale = 0;
    s.noise_scale = 0;
    Dataset d = generate_dataset(s);
    for (const auto& v : d.videos) {
        for (int t = 0; t < v.frames.rows(); ++t) {
            EXPECT_EQ(v.frames.row(t), d.video_centroids.row(v.id));
        }
    }
}

TEST(GenerateDataset, SameSeedIsBitIdentical) {
    Dataset a = generate_dataset(small_spec(7));
    Dataset b = generate_dataset(small_spec(7));
    ASSERT_EQ(a.videos.size(), b.videos.size());
    for (std::size_t i = 0; i < a.videos.size(); ++i) {
        EXPECT_EQ(a.videos[i].frames, b.videos[i].frames);
        EXPECT_EQ(a.videos[i].class_label, b.videos[i].class_label);
    }
    Dataset c = generate_dataset(small_spec(8));
    EXPECT_NE(a.videos[0].frames, c.videos[0].frames);
}

TEST(GenerateDataset, CentroidsRespectSeparation) {
    VideoSpec s = small_spec();
    s.num_classes = 2;
    s.class_separation = 10;
    s.drift_scale = 0.1;
    Dataset d = generate_dataset(s);
    EXPECT_GE((d.class_centroids.row(0) - d.class_centroids.row(1)).norm(), 10 - 1e-9);

    s.num_classes = 12;
    s.frame_dim = 4;
    s.class_separation = 2;
    d = generate_dataset(s);
    for (int i = 0; i < 12; ++i) {
        for (int j = i + 1; j < 12; ++j) {
            EXPECT_GE((d.class_centroids.row(i) - d.class_centroids.row(j)).norm(), 2 - 1e-9);
        }
    }
}

TEST(GenerateDataset, ShapesAndLabels) {
    Dataset d = generate_dataset(small_spec());
    ASSERT_EQ(d.videos.size(), 24u);
    for (std::size_t i = 0; i < d.videos.size(); ++i) {
        EXPECT_EQ(d.videos[i].id, static_cast<int>(i));
        EXPECT_EQ(d.videos[i].frames.rows(), 16);
        EXPECT_EQ(d.videos[i].frames.cols(), 8);
        EXPECT_EQ(d.videos[i].class_label, static_cast<int>(i) / 6);
    }
}

TEST(GenerateDataset, InvalidSpecIsConfigError) {
    VideoSpec s = small_spec();
    s.num_classes = 0;
    EXPECT_THROW(generate_dataset(s), ConfigError);
    s = small_spec();
    s.frame_dim = 0;
    EXPECT_THROW(generate_dataset(s), ConfigError);
    s = small_spec();
    s.noise_scale = -1;
    EXPECT_THROW(generate_dataset(s), ConfigError);
}

TEST(SampleClip, FullLengthClipIsWholeVideo) {
    Dataset d = generate_dataset(small_spec());
    Rng rng(1);
    Clip c = sample_clip(d.videos[3], 16, 1, rng);
    EXPECT_EQ(c.start_frame, 0);
    EXPECT_EQ(c.frames, d.videos[3].frames);
    EXPECT_EQ(c.video_id, 3);
}

TEST(SampleClip, StridedFramesAndRange) {
    Dataset d = generate_dataset(small_spec());
    Rng rng(2);
    std::vector<int> seen(16, 0);
    for (int i = 0; i < 400; ++i) {
        Clip c = sample_clip(d.videos[0], 4, 2, rng);
        ASSERT_GE(c.start_frame, 0);
        ASSERT_LE(c.start_frame, 16 - 8);
        ++seen[c.start_frame];
        for (int k = 0; k < 4; ++k) EXPECT_EQ(c.frames.row(k), d.videos[0].frames.row(c.start_frame + 2 * k));
    }
    for (int s = 0; s <= 8; ++s) EXPECT_GT(seen[s], 0) << "start " << s;
}

TEST(SampleClip, DeterministicAndErrors) {
    Dataset d = generate_dataset(small_spec());
    Rng a(5), b(5);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_clip(d.videos[1], 4, 2, a).start_frame, sample_clip(d.videos[1], 4, 2, b).start_frame);
    Rng rng(0);
    EXPECT_THROW(sample_clip(d.videos[0], 9, 2, rng), RangeError);
    EXPECT_THROW(sample_clip(d.videos[0], 17, 1, rng), RangeError);
}

TEST(SampleClip, DisjointClipsShareVideoId) {
    Dataset d = generate_dataset(small_spec());
    Clip a = clip_at(d.videos[5], 4, 1, 0);
    Clip b = clip_at(d.videos[5], 4, 1, 8);
    EXPECT_EQ(a.video_id, 5);
    EXPECT_EQ(b.video_id, 5);
}

TEST(UniformClipStarts, SpreadOverRange) {
    auto s = uniform_clip_starts(32, 8, 2, 10);
    ASSERT_EQ(s.size(), 10u);
    EXPECT_EQ(s.front(), 0);
    EXPECT_EQ(s.back(), 32 - 8 * 2);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
}

TEST(SplitSubclips, Examples) {
    Mat f(8, 2);
    for (int i = 0; i < 8; ++i) f.row(i) << i, -i;
    auto two = split_subclips(f, 2);
    ASSERT_EQ(two.size(), 2u);
    EXPECT_EQ(two[0], f.topRows(4));
    EXPECT_EQ(two[1], f.bottomRows(4));
    auto one = split_subclips(f, 1);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0], f);
    auto four = split_subclips(f, 4);
    ASSERT_EQ(four.size(), 4u);
    for (int k = 0; k < 4; ++k) EXPECT_EQ(four[k], f.middleRows(2 * k, 2));
    EXPECT_THROW(split_subclips(f, 3), ShapeError);
}

TEST(SplitSubclips, RoundTripProperty) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        int segments = uniform_int(rng, 1, 5);
        int per = uniform_int(rng, 1, 4);
        int dim = uniform_int(rng, 1, 6);
        Mat f = Mat::Random(segments * per, dim);
        EXPECT_EQ(concat_subclips(split_subclips(f, segments)), f);
    }
}

TEST(ShuffleSubclips, SwapAtTwoSegments) {
    Dataset d = generate_dataset(small_spec());
    Clip c = clip_at(d.videos[0], 8, 2, 0);
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        auto s = shuffle_subclips(c, 2, rng);
        EXPECT_EQ(s.perm, (Permutation{1, 0}));
        EXPECT_EQ(s.clip.frames.topRows(4), c.frames.bottomRows(4));
        EXPECT_EQ(s.clip.frames.bottomRows(4), c.frames.topRows(4));
        EXPECT_EQ(shuffle_subclips(s.clip, 2, rng).clip.frames, c.frames);
    }
}

TEST(ShuffleSubclips, NeverIdentityAndUnshuffles) {
    Dataset d = generate_dataset(small_spec());
    Clip c = clip_at(d.videos[2], 8, 2, 0);
    Rng rng(4);
    std::set<Permutation> seen;
    for (int i = 0; i < 500; ++i) {
        auto s = shuffle_subclips(c, 4, rng);
        EXPECT_FALSE(is_identity(s.perm));
        seen.insert(s.perm);
        EXPECT_EQ(unshuffle(s.clip, 4, s.perm).frames, c.frames);
    }
    EXPECT_EQ(seen.size(), 23u);
    EXPECT_THROW(shuffle_subclips(c, 1, rng), ConfigError);
}

TEST(Augment, IdentityConfigLeavesClip) {
    Dataset d = generate_dataset(small_spec());
    Clip c = clip_at(d.videos[0], 8, 2, 0);
    AugmentConfig cfg{0.0, 1.0, 1.0, 1.0};
    Rng rng(0);
    EXPECT_EQ(augment(c, cfg, rng).frames, c.frames);
}

TEST(Augment, DeterministicGivenRng) {
    Dataset d = generate_dataset(small_spec());
    Clip c = clip_at(d.videos[0], 8, 2, 0);
    AugmentConfig cfg{0.5, 0.8, 1.2, 0.75};
    Rng a(9), b(9);
    EXPECT_EQ(augment(c, cfg, a).frames, augment(c, cfg, b).frames);
}

TEST(Augment, JitterIsTemporallyConsistent) {
    Dataset d = generate_dataset(small_spec());
    Clip c = clip_at(d.videos[0], 8, 2, 0);
    AugmentConfig cfg{0.7, 1.0, 1.0, 1.0};
    Rng rng(12);
    Clip a = augment(c, cfg, rng);
    Mat delta = a.frames - c.frames;
    for (int t = 1; t < delta.rows(); ++t) EXPECT_LT((delta.row(t) - delta.row(0)).norm(), 1e-12);
    EXPECT_GT(delta.row(0).norm(), 0.0);
}

TEST(Augment, RecordedParamsReproduceEveryFrame) {
    Dataset d = generate_dataset(small_spec());
    Rng rng(21);
    AugmentConfig cfg{0.4, 0.5, 1.5, 0.5};
    for (int trial = 0; trial < 50; ++trial) {
        Clip c = sample_clip(d.videos[trial % d.videos.size()], 4, 2, rng);
        AugmentParams p = draw_augment_params(c.frames.cols(), cfg, rng);
        Clip a = apply_augment(c, p);
        for (int t = 0; t < c.frames.rows(); ++t) {
            for (int j = 0; j < c.frames.cols(); ++j) {
                double mask = (j >= p.crop_start && j < p.crop_start + p.crop_length) ? 1.0 : 0.0;
                EXPECT_DOUBLE_EQ(a.frames(t, j), mask * (p.scale(j) * c.frames(t, j) + p.offset(j)));
            }
        }
        EXPECT_GE(p.crop_length, 1);
        EXPECT_LE(p.crop_start + p.crop_length, c.frames.cols());
    }
}

TEST(TrainingTuple, ShuffledIsAugmentedSwap) {
    Dataset d = generate_dataset(small_spec());
    Rng rng(6);
    AugmentConfig cfg{0.3, 0.9, 1.1, 1.0};
    auto t = make_training_tuple(d.videos[4], 8, 2, 2, cfg, rng);
    EXPECT_EQ(unshuffle(t.s_hat, 2, t.perm).frames, t.c_hat.frames);
    EXPECT_EQ(t.s_hat.frames.topRows(4), t.c_hat.frames.bottomRows(4));
    EXPECT_EQ(apply_augment(t.c, t.params).frames, t.c_hat.frames);
}

TEST(TrainingTuple, ZeroAugmentationShufflesRawClip) {
    Dataset d = generate_dataset(small_spec());
    Rng rng(6);
    AugmentConfig cfg{0.0, 1.0, 1.0, 1.0};
    auto t = make_training_tuple(d.videos[4], 8, 2, 2, cfg, rng);
    EXPECT_EQ(t.c_hat.frames, t.c.frames);
    EXPECT_EQ(t.s_hat.frames, permute_subclips(t.c, 2, t.perm).frames);
}

TEST(Permutations, InverseProperty) {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        int n = uniform_int(rng, 1, 6);
        auto p = random_permutation(n, rng);
        auto inv = inverse_permutation(p);
        for (int i = 0; i < n; ++i) EXPECT_EQ(inv[p[i]], i);
    }
}

TEST(Split, FirstPerClassGoesToTrain) {
    Dataset d = generate_dataset(small_spec());
    Split s = split_per_class(d, 4);
    EXPECT_EQ(s.train.size(), 16u);
    EXPECT_EQ(s.test.size(), 8u);
    for (int i : s.train) EXPECT_LT(i % 6, 4);
    for (int i : s.test) EXPECT_GE(i % 6, 4);
    EXPECT_TRUE(split_per_class(d, 7).test.empty());
    EXPECT_THROW(split_per_class(d, -1), ConfigError);
}

TEST(DatasetIo, RoundTripIsExact) {
    TempDir dir("dataset");
    Dataset d = generate_dataset(small_spec(3));
    save_dataset(d, dir / "ds");
    Dataset e = load_dataset(dir / "ds");
    ASSERT_EQ(e.videos.size(), d.videos.size());
    EXPECT_EQ(e.spec.seed, 3u);
    EXPECT_EQ(e.class_centroids, d.class_centroids);
    for (std::size_t i = 0; i < d.videos.size(); ++i) {
        EXPECT_EQ(e.videos[i].frames, d.videos[i].frames);
        EXPECT_EQ(e.videos[i].class_label, d.videos[i].class_label);
    }
}

TEST(DatasetIo, CorruptManifestIsRejected) {
    TempDir dir("dataset_bad");
    Dataset d = generate_dataset(small_spec());
    save_dataset(d, dir / "ds");
    write_text(dir / "ds" / "manifest.txt", "format=something-else\n");
    EXPECT_THROW(load_dataset(dir / "ds"), ManifestError);
}
