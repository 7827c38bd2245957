#pragma once

#include "remigen/bpe.hpp"
#include "remigen/checkpoint.hpp"
#include "remigen/chord.hpp"
#include "remigen/conditions.hpp"
#include "remigen/dataset.hpp"
#include "remigen/error.hpp"
#include "remigen/evaluate.hpp"
#include "remigen/inference.hpp"
#include "remigen/metrics.hpp"
#include "remigen/midi_io.hpp"
#include "remigen/model.hpp"
#include "remigen/remi.hpp"
#include "remigen/song.hpp"
#include "remigen/song_json.hpp"
#include "remigen/synth.hpp"
#include "remigen/train.hpp"
#include "remigen/vocab.hpp"
